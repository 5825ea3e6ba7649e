"""Monocular scale estimation against LiDAR depth.

Tracked correspondences are culled with two epipolar tests, triangulated
with the visual-odometry relative pose, and each surviving point yields a
sample ``s = lidar_depth / visual_depth``.  A 1-point RANSAC over those
samples produces the scale, and :func:`apply_scale_correction` rescales the
local map about its reference keyframe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InsufficientSamplesError, NoConsensusError
from .geometry import CameraIntrinsics, Pose, epipolar_lines, fundamental_matrix, triangulate_pairs

TRIGGER_THRESHOLD = 0.02


@dataclass(frozen=True, eq=False)
class MatchedPairs:
    """Batch of matched pairs: previous/current pixels, LiDAR depth, current gradient."""

    x_prev: np.ndarray
    x_cur: np.ndarray
    lidar_depth: np.ndarray
    grad_cur: np.ndarray

    def __post_init__(self):
        for name in ("x_prev", "x_cur", "grad_cur"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1, 2))
        d = np.asarray(self.lidar_depth, dtype=float).reshape(-1)
        if np.any(d <= 0):
            raise DomainError("LiDAR depth must be positive")
        object.__setattr__(self, "lidar_depth", d)

    def __len__(self):
        return self.x_prev.shape[0]

    def subset(self, idx) -> "MatchedPairs":
        return MatchedPairs(self.x_prev[idx], self.x_cur[idx], self.lidar_depth[idx], self.grad_cur[idx])


@dataclass(frozen=True)
class CullingThresholds:
    max_normal_error: float = 0.5
    min_abs_cos: float = 0.5


def cull_matches(pairs: MatchedPairs, K: CameraIntrinsics, rel: Pose, thresholds: CullingThresholds | None = None) -> MatchedPairs:
    """Keep pairs near the epipolar line whose gradient is not across it."""
    th = thresholds or CullingThresholds()
    if len(pairs) == 0:
        fundamental_matrix(K, rel)  # still reject a degenerate baseline
        return pairs
    keep = epipolar_keep_mask(pairs, K, rel, th)
    return pairs.subset(np.flatnonzero(keep))


def epipolar_keep_mask(pairs: MatchedPairs, K: CameraIntrinsics, rel: Pose, th: CullingThresholds) -> np.ndarray:
    lines = epipolar_lines(K, rel, pairs.x_prev)
    a, b, c = lines[:, 0], lines[:, 1], lines[:, 2]
    u, v = pairs.x_cur[:, 0], pairs.x_cur[:, 1]
    normal_err = np.abs(a * u + b * v + c)
    gx, gy = pairs.grad_cur[:, 0], pairs.grad_cur[:, 1]
    gnorm = np.hypot(gx, gy)
    with np.errstate(invalid="ignore", divide="ignore"):
        # (-b, a) is the line direction, already unit length
        abs_cos = np.abs(-b * gx + a * gy) / gnorm
    return (normal_err < th.max_normal_error) & (gnorm > 0) & (abs_cos > th.min_abs_cos)


@dataclass(frozen=True, eq=False)
class ScaleSamples:
    """Per-point scale samples ``s = d / v`` with the pairs that produced them."""

    s: np.ndarray
    d: np.ndarray
    v: np.ndarray
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    dropped_cheirality: int = 0
    dropped_parallax: int = 0

    def __len__(self):
        return self.s.shape[0]


def compute_scale_samples(pairs: MatchedPairs, K: CameraIntrinsics, rel: Pose, min_parallax_deg: float = 0.5) -> ScaleSamples:
    points, v, status = triangulate_pairs(K, rel, pairs.x_prev, pairs.x_cur, min_parallax_deg)
    good = status == 0
    d = pairs.lidar_depth[good]
    return ScaleSamples(
        s=d / v[good],
        d=d,
        v=v[good],
        points=points[good],
        dropped_cheirality=int(np.sum(status == 1)),
        dropped_parallax=int(np.sum(status == 2)),
    )


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 100
    inlier_tol: float = 0.05
    min_samples: int = 10
    min_inliers: int = 8
    seed: int = 0


@dataclass(frozen=True)
class ScaleEstimate:
    scale: float
    inlier_count: int
    sample_count: int
    inlier_spread: float


def _consensus(s: np.ndarray, h: float, tol: float) -> np.ndarray:
    return np.abs(s - h) <= tol * h


def ransac_scale(samples, cfg: RansacConfig | None = None) -> ScaleEstimate:
    """1-point RANSAC on a scalar; returns the mean of the winning inlier set.

    When there are no more samples than iterations every sample is tried as
    a hypothesis, otherwise ``cfg.iterations`` distinct samples are drawn.
    """
    cfg = cfg or RansacConfig()
    s = np.asarray(samples.s if isinstance(samples, ScaleSamples) else samples, dtype=float).reshape(-1)
    n = s.size
    if n < cfg.min_samples:
        raise InsufficientSamplesError(f"{n} samples, need {cfg.min_samples}")
    if n <= cfg.iterations:
        hyps = np.arange(n)
    else:
        hyps = np.random.default_rng(cfg.seed).choice(n, size=cfg.iterations, replace=False)
    best_mask, best_count, best_spread = None, -1, np.inf
    for i in hyps:
        h = s[i]
        if not h > 0:
            continue
        mask = _consensus(s, h, cfg.inlier_tol)
        count = int(mask.sum())
        if count < best_count:
            continue
        inl = s[mask]
        spread = float(inl.std() / inl.mean())
        if count > best_count or spread < best_spread:
            best_mask, best_count, best_spread = mask, count, spread
    if best_mask is None or best_count < cfg.min_inliers:
        raise NoConsensusError(f"largest consensus {max(best_count, 0)} < {cfg.min_inliers}")
    return ScaleEstimate(float(s[best_mask].mean()), best_count, n, best_spread)


def should_correct(est: ScaleEstimate, threshold: float = TRIGGER_THRESHOLD) -> bool:
    # the epsilon absorbs representation error in values like 1.02
    return abs(est.scale - 1.0) >= threshold - 1e-12


@dataclass(frozen=True, eq=False)
class LocalMap:
    """Keyframe poses (camera to world) and world-frame map points."""

    keyframe_poses: tuple
    map_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    reference_index: int = 0

    def __post_init__(self):
        poses = tuple(self.keyframe_poses)
        if not poses:
            raise DomainError("local map needs at least one keyframe")
        if not 0 <= self.reference_index < len(poses):
            raise DomainError("reference index outside keyframe list")
        object.__setattr__(self, "keyframe_poses", poses)
        object.__setattr__(self, "map_points", np.asarray(self.map_points, dtype=float).reshape(-1, 3))

    @property
    def reference(self) -> Pose:
        return self.keyframe_poses[self.reference_index]


def rescale_about(reference: Pose, pose: Pose, scale: float) -> Pose:
    """Scale ``pose``'s position in the ``reference`` frame; rotation untouched."""
    local = reference.inverse().apply(pose.translation)
    return Pose(pose.rotation, reference.apply(scale * local))


def apply_scale_correction(local_map: LocalMap, scale: float) -> LocalMap:
    if not scale > 0:
        raise DomainError("scale must be positive")
    ref = local_map.reference
    to_ref = ref.inverse()
    poses = tuple(
        p if i == local_map.reference_index else rescale_about(ref, p, scale)
        for i, p in enumerate(local_map.keyframe_poses)
    )
    pts = ref.apply(to_ref.apply(local_map.map_points) * scale) if len(local_map.map_points) else local_map.map_points
    return LocalMap(poses, pts, local_map.reference_index)
