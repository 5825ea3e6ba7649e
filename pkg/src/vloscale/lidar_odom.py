"""Scan-to-scan point-to-plane LiDAR odometry.

The registration core is deliberately small: exact k-NN normals, nearest
neighbour association and a Gauss-Newton step on the linearized
point-to-plane cost.  What matters for the experiments is the initial guess,
which comes either from a constant-velocity prediction or from the
(scale-corrected) visual odometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import DomainError, RegistrationError
from .geometry import PointCloud, Pose

MODES = ("bootstrap", "constvel")


@dataclass(frozen=True, eq=False)
class NormalCloud:
    """Points with unit normals; ``valid`` marks points whose normal is defined."""

    points: np.ndarray
    normals: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        v = np.asarray(self.valid, dtype=bool).reshape(-1)
        if not (p.shape == n.shape and v.shape[0] == p.shape[0]):
            raise DomainError("points, normals and flags must have matching lengths")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "valid", v)

    def __len__(self):
        return self.points.shape[0]

    def transformed(self, pose: Pose) -> "NormalCloud":
        return NormalCloud(pose.apply(self.points), self.normals @ pose.rotation.T, self.valid)


def fit_normals(neighborhoods: np.ndarray, rank_tol: float = 1e-9):
    """Plane fit for a batch of ``(N, k, 3)`` neighbourhoods.

    Returns ``(normals, rank_ok)``; the normal is the eigenvector of the
    smallest covariance eigenvalue.  A neighbourhood whose two largest
    eigenvalues are not both significant (collinear or coincident points)
    has no defined plane.
    """
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / neighborhoods.shape[1]
    w, v = np.linalg.eigh(cov)
    rank_ok = w[:, 1] > rank_tol * np.maximum(w[:, 2], np.finfo(float).tiny)
    return v[:, :, 0], rank_ok


def nearest_neighbors(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``k`` nearest neighbours of every point (itself included): ``(distances, indices)``."""
    return cKDTree(points).query(points, k=k)


def estimate_normals(cloud, k: int = 10, radius: float = 2.0) -> NormalCloud:
    """Normals from the ``k`` nearest neighbours (the point itself included).

    A point is flagged invalid when fewer than ``k`` points lie within
    ``radius`` of it or its neighbourhood is rank-deficient.  Normals are
    oriented towards the sensor origin.
    """
    if k < 3:
        raise DomainError("k must be at least 3")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    if n < k:
        return NormalCloud(pts, np.zeros((n, 3)), np.zeros(n, dtype=bool))
    dist, idx = nearest_neighbors(pts, k)
    normals, rank_ok = fit_normals(pts[idx])
    valid = rank_ok & (dist[:, -1] <= radius)
    flip = np.einsum("ij,ij->i", normals, pts) > 0
    normals[flip] *= -1.0
    normals[~valid] = 0.0
    return NormalCloud(pts, normals, valid)


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Centroid of the points falling in each cubic voxel, in voxel order."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if voxel <= 0 or points.shape[0] == 0:
        return points
    cells = np.floor(points / voxel).astype(np.int64)
    cells -= cells.min(axis=0)
    span = cells.max(axis=0) + 1
    keys = (cells[:, 0] * span[1] + cells[:, 1]) * span[2] + cells[:, 2]
    _, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    sums = np.column_stack([np.bincount(inverse, weights=points[:, j], minlength=counts.size) for j in range(3)])
    return sums / counts[:, None]


@dataclass(frozen=True)
class IcpConfig:
    max_corr_dist: float = 1.0
    max_iters: int = 20
    tol: float = 1e-6
    min_correspondences: int = 10
    # directions of the normal matrix weaker than this fraction of the
    # strongest one are left at their initial value
    degeneracy_ratio: float = 5e-3
    max_halvings: int = 10


class IcpResult(NamedTuple):
    pose: Pose
    residual: float
    iterations: int


def _twist_pose(omega: np.ndarray, v: np.ndarray, center: np.ndarray) -> Pose:
    # rotation by omega about ``center`` followed by translation v
    r = Rotation.from_rotvec(omega).as_matrix()
    return Pose(r, center - r @ center + v)


def point_to_plane_icp(source, target: NormalCloud, init: Pose | None = None, cfg: IcpConfig | None = None) -> IcpResult:
    """Register ``source`` onto ``target``; the returned pose maps source into target coordinates."""
    cfg = cfg or IcpConfig()
    src = source.points if isinstance(source, PointCloud) else np.asarray(source, dtype=float).reshape(-1, 3)
    if src.shape[0] == 0 or len(target) == 0:
        raise DomainError("both clouds must be non-empty")
    tgt_pts = target.points[target.valid]
    tgt_nrm = target.normals[target.valid]
    if tgt_pts.shape[0] < cfg.min_correspondences:
        raise RegistrationError(f"target has only {tgt_pts.shape[0]} points with valid normals")
    tree = cKDTree(tgt_pts)
    pose = init or Pose.identity()
    residual, it = 0.0, 0
    for it in range(1, cfg.max_iters + 1):
        moved = pose.apply(src)
        dist, idx = tree.query(moved, distance_upper_bound=cfg.max_corr_dist)
        m = np.isfinite(dist)
        if m.sum() < cfg.min_correspondences:
            raise RegistrationError(f"only {int(m.sum())} correspondences within {cfg.max_corr_dist} m")
        p, q, nrm = src[m], tgt_pts[idx[m]], tgt_nrm[idx[m]]

        def sse(candidate: Pose) -> float:
            r = np.einsum("ij,ij->i", candidate.apply(p) - q, nrm)
            return float(r @ r)

        current = sse(pose)
        residual = np.sqrt(current / p.shape[0])
        pm = moved[m]
        center = pm.mean(axis=0)
        arm = pm - center
        radius = max(float(np.sqrt(np.mean(np.sum(arm * arm, axis=1)))), 1e-9)
        jac = np.hstack([np.cross(arm, nrm) / radius, nrm])
        r = np.einsum("ij,ij->i", pm - q, nrm)
        w, vecs = np.linalg.eigh(jac.T @ jac)
        keep = w > cfg.degeneracy_ratio * max(w[-1], np.finfo(float).tiny)
        step = -vecs[:, keep] @ ((vecs[:, keep].T @ (jac.T @ r)) / w[keep])
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            cand = _twist_pose(step[:3] / radius, step[3:], center) @ pose
            new = sse(cand)
            if new <= current:
                accepted = cand
                break
            step = step / 2.0
        if accepted is None:
            break
        pose = accepted
        residual = np.sqrt(new / p.shape[0])
        if np.linalg.norm(step) < cfg.tol:
            break
    return IcpResult(pose, float(residual), it)


@dataclass(frozen=True)
class LidarOdomConfig:
    voxel_size: float = 0.4
    source_stride: int = 20
    normal_k: int = 20
    normal_radius: float = 2.0
    icp: IcpConfig = field(default_factory=IcpConfig)


@dataclass(frozen=True, eq=False)
class OdomState:
    """Odometry state carried from frame to frame.

    ``frame_index`` is -1 before the first scan has been consumed.
    """

    last_pose: Pose = field(default_factory=Pose.identity)
    last_relative: Pose = field(default_factory=Pose.identity)
    frame_index: int = -1
    target: NormalCloud | None = None
    fallbacks: int = 0


def prepare_target(points: np.ndarray, cfg: LidarOdomConfig) -> NormalCloud:
    return estimate_normals(voxel_downsample(points, cfg.voxel_size), cfg.normal_k, cfg.normal_radius)


def prepare_source(points: np.ndarray, cfg: LidarOdomConfig) -> np.ndarray:
    # raw returns rather than voxel centroids: centroids of a moving scan
    # pattern are biased near edges
    return np.asarray(points, dtype=float)[:: max(cfg.source_stride, 1)]


def lidar_odometry_step(state: OdomState, scan: PointCloud, vo_relative: Pose | None = None,
                        mode: str = "bootstrap", cfg: LidarOdomConfig | None = None) -> tuple[Pose, OdomState]:
    """Register ``scan`` against the previous one and advance the state.

    ``vo_relative`` is the motion from the previous to the current LiDAR
    frame (previous-frame coordinates of the current sensor pose).  Bootstrap
    mode without it falls back to the constant-velocity guess and counts the
    fallback.
    """
    if mode not in MODES:
        raise DomainError(f"unknown odometry mode {mode!r}")
    cfg = cfg or LidarOdomConfig()
    target = prepare_target(scan.points, cfg)
    if state.frame_index < 0 or state.target is None:
        return state.last_pose, replace(state, frame_index=0, target=target)
    fallbacks = state.fallbacks
    if mode == "bootstrap" and vo_relative is not None:
        init = vo_relative
    else:
        init = state.last_relative
        fallbacks += mode == "bootstrap"
    source = prepare_source(scan.points, cfg)
    rel = point_to_plane_icp(source, state.target, init, cfg.icp).pose
    pose = state.last_pose @ rel
    return pose, OdomState(pose, rel, state.frame_index + 1, target, fallbacks)
