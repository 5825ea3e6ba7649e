"""Projective geometry shared by the camera and LiDAR pipelines.

Conventions used throughout the package:

* A :class:`Pose` maps coordinates from its source frame into its target
  frame, ``y = R @ x + t``.  ``T_L_C`` therefore maps LiDAR points into the
  camera frame, and a trajectory pose maps camera coordinates into the world.
* Camera frames are x right, y down, z forward.  Pixel ``(u, v)`` is the
  continuous coordinate whose integer values coincide with the samples
  ``image[v, u]``.
* The relative pose ``rel`` handed to the epipolar routines maps points of the
  previous camera frame into the current one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    AlignmentDegenerateError,
    BehindCameraError,
    DegenerateGeometryError,
    DomainError,
    LowParallaxError,
)

MIN_DEPTH = 1e-6
MIN_BASELINE = 1e-6
MIN_PARALLAX_DEG = 0.5


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + t`` (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise DomainError("pose contains non-finite values")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6 or np.linalg.det(r) < 0:
            raise DomainError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, q_xyzw, translation) -> "Pose":
        return cls(Rotation.from_quat(q_xyzw).as_matrix(), translation)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    def quaternion(self) -> np.ndarray:
        """Unit quaternion ``(qx, qy, qz, qw)`` with ``qw >= 0``."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def with_translation(self, translation) -> "Pose":
        return Pose(self.rotation, translation)

    def scaled(self, s: float) -> "Pose":
        """Same rotation, translation multiplied by ``s``."""
        return Pose(self.rotation, self.translation * s)

    def angle(self) -> float:
        """Rotation angle in radians."""
        return _rotation_angle(self.rotation)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )

    def __repr__(self):
        rv = Rotation.from_matrix(self.rotation).as_rotvec()
        return f"Pose(rotvec={np.round(rv, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


def _rotation_angle(r: np.ndarray) -> float:
    # atan2 of the skew and symmetric parts stays accurate near 0 and pi, unlike arccos of the trace
    skew = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return float(np.arctan2(np.linalg.norm(skew), np.trace(r) - 1.0))


def rotation_angle_between(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle (radians) between two rotation matrices."""
    return _rotation_angle(ra.T @ rb)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def normalize(self, pixels) -> np.ndarray:
        """Pixels ``(N, 2)`` to normalized image coordinates ``(N, 2)``."""
        p = np.asarray(pixels, dtype=float)
        return np.stack([(p[..., 0] - self.cx) / self.fx, (p[..., 1] - self.cy) / self.fy], axis=-1)

    def contains(self, pixels) -> np.ndarray:
        p = np.asarray(pixels, dtype=float)
        return (p[..., 0] >= 0) & (p[..., 0] < self.width) & (p[..., 1] >= 0) & (p[..., 1] < self.height)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """LiDAR points in the sensor frame, optionally tagged with a beam index."""

    points: np.ndarray
    timestamp: float = 0.0
    beam: np.ndarray | None = None
    beam_count: int | None = None

    def __post_init__(self):
        p = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise DomainError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(p))
        if self.beam is not None:
            b = np.array(self.beam, dtype=np.int64).reshape(-1)
            if b.shape[0] != p.shape[0]:
                raise DomainError("beam index length differs from point count")
            if b.size and (b.min() < 0 or (self.beam_count is not None and b.max() >= self.beam_count)):
                raise DomainError("beam index outside [0, beam_count)")
            object.__setattr__(self, "beam", _frozen(b))

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class ProjectedKeypoint:
    pixel: np.ndarray
    depth: float
    source_point: np.ndarray
    beam: int | None = None


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Batch of projected keypoints (the array form of :class:`ProjectedKeypoint`)."""

    pixels: np.ndarray
    depths: np.ndarray
    sources: np.ndarray
    beams: np.ndarray | None = None

    @classmethod
    def empty(cls) -> "KeypointSet":
        return cls(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3)), None)

    def __len__(self):
        return self.pixels.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            beam = None if self.beams is None else int(self.beams[idx])
            return ProjectedKeypoint(self.pixels[idx], float(self.depths[idx]), self.sources[idx], beam)
        beams = None if self.beams is None else self.beams[idx]
        return KeypointSet(self.pixels[idx], self.depths[idx], self.sources[idx], beams)

    def __iter__(self) -> Iterator[ProjectedKeypoint]:
        for i in range(len(self)):
            yield self[i]


@dataclass(frozen=True)
class EpipolarLine:
    """Line ``a u + b v + c = 0`` with ``a**2 + b**2 == 1``."""

    a: float
    b: float
    c: float

    def distance(self, pixel) -> float:
        u, v = pixel
        return abs(self.a * u + self.b * v + self.c)

    @property
    def direction(self) -> np.ndarray:
        return np.array([-self.b, self.a])


def project_point(K: CameraIntrinsics, T_L_C: Pose, p) -> tuple[np.ndarray, float]:
    """Project a LiDAR point to ``(pixel, camera depth)``; no bounds check."""
    pc = T_L_C.apply(np.asarray(p, dtype=float))
    z = pc[2]
    if not z > MIN_DEPTH:
        raise BehindCameraError(f"point at camera depth {z:.3g} m")
    return np.array([K.fx * pc[0] / z + K.cx, K.fy * pc[1] / z + K.cy]), float(z)


def back_project(K: CameraIntrinsics, T_L_C: Pose, pixels, depths) -> np.ndarray:
    """Inverse of :func:`project_point`: sensor-frame points from pixels and depths."""
    n = K.normalize(pixels)
    d = np.asarray(depths, dtype=float)
    pc = np.stack([n[..., 0] * d, n[..., 1] * d, d], axis=-1)
    return T_L_C.inverse().apply(pc)


def project_cloud(K: CameraIntrinsics, T_L_C: Pose, cloud: PointCloud) -> KeypointSet:
    """Project a cloud, keeping the nearest in-image point per integer pixel cell."""
    pts = cloud.points
    if len(pts) == 0:
        return KeypointSet.empty()
    pc = T_L_C.apply(pts)
    front = pc[:, 2] > MIN_DEPTH
    idx = np.flatnonzero(front)
    z = pc[idx, 2]
    u = K.fx * pc[idx, 0] / z + K.cx
    v = K.fy * pc[idx, 1] / z + K.cy
    inside = (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    idx, u, v, z = idx[inside], u[inside], v[inside], z[inside]
    if idx.size == 0:
        return KeypointSet.empty()
    cell = np.floor(v).astype(np.int64) * K.width + np.floor(u).astype(np.int64)
    order = np.lexsort((idx, z, cell))
    first = np.ones(order.size, dtype=bool)
    first[1:] = cell[order][1:] != cell[order][:-1]
    keep = np.sort(order[first])
    beams = None if cloud.beam is None else cloud.beam[idx[keep]]
    return KeypointSet(
        np.stack([u[keep], v[keep]], axis=1), z[keep], pts[idx[keep]], beams
    )


def fundamental_matrix(K: CameraIntrinsics, rel: Pose) -> np.ndarray:
    t = rel.translation
    if np.linalg.norm(t) <= MIN_BASELINE:
        raise DegenerateGeometryError("relative translation too small for epipolar geometry")
    kinv = K.inverse_matrix
    return kinv.T @ skew(t) @ rel.rotation @ kinv


def epipolar_lines(K: CameraIntrinsics, rel: Pose, x_prev) -> np.ndarray:
    """Normalized lines ``(N, 3)`` in the current image for previous-image pixels.

    Rows whose line is undefined (pixel at the epipole) are NaN.
    """
    F = fundamental_matrix(K, rel)
    x = np.asarray(x_prev, dtype=float).reshape(-1, 2)
    xh = np.hstack([x, np.ones((x.shape[0], 1))])
    lines = xh @ F.T
    norm = np.hypot(lines[:, 0], lines[:, 1])
    with np.errstate(invalid="ignore", divide="ignore"):
        out = lines / norm[:, None]
    out[norm <= 1e-12 * np.abs(lines).max(axis=1, initial=0.0) + 1e-300] = np.nan
    return out


def epipolar_line(K: CameraIntrinsics, rel: Pose, x_prev) -> EpipolarLine:
    line = epipolar_lines(K, rel, x_prev)[0]
    if not np.all(np.isfinite(line)):
        raise DegenerateGeometryError("pixel coincides with the epipole")
    return EpipolarLine(*map(float, line))


def _triangulate_normalized(rel: Pose, n_prev: np.ndarray, n_cur: np.ndarray) -> np.ndarray:
    """Batched DLT in normalized coordinates; returns homogeneous points ``(N, 4)``."""
    P1 = np.hstack([rel.rotation, rel.translation[:, None]])
    N = n_prev.shape[0]
    A = np.zeros((N, 4, 4))
    A[:, 0, 0] = -1.0
    A[:, 0, 2] = n_prev[:, 0]
    A[:, 1, 1] = -1.0
    A[:, 1, 2] = n_prev[:, 1]
    A[:, 2, :] = n_cur[:, 0:1] * P1[2] - P1[0]
    A[:, 3, :] = n_cur[:, 1:2] * P1[2] - P1[1]
    _, _, vt = np.linalg.svd(A)
    return vt[:, -1, :]


def triangulate_pairs(K: CameraIntrinsics, rel: Pose, x_prev, x_cur, min_parallax_deg=MIN_PARALLAX_DEG):
    """Vectorized :func:`triangulate_pair`.

    Returns ``(points, depths, status)`` where ``status`` is 0 for success,
    1 for a cheirality failure and 2 for insufficient parallax.  Failed rows
    carry NaN.
    """
    if np.linalg.norm(rel.translation) <= MIN_BASELINE:
        raise DegenerateGeometryError("zero baseline")
    xp = np.asarray(x_prev, dtype=float).reshape(-1, 2)
    xc = np.asarray(x_cur, dtype=float).reshape(-1, 2)
    if xp.shape[0] == 0:
        return np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int8)
    Xh = _triangulate_normalized(rel, K.normalize(xp), K.normalize(xc))
    w = Xh[:, 3]
    status = np.zeros(xp.shape[0], dtype=np.int8)
    at_infinity = np.abs(w) < 1e-12 * np.linalg.norm(Xh[:, :3], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        X = Xh[:, :3] / w[:, None]
    X[at_infinity] = np.nan
    depth_prev = X[:, 2]
    depth_cur = (X @ rel.rotation.T + rel.translation)[:, 2]
    behind = ~at_infinity & ~((depth_prev > 0) & (depth_cur > 0))
    centre_cur = -rel.rotation.T @ rel.translation
    r1 = X
    r2 = X - centre_cur
    with np.errstate(invalid="ignore", divide="ignore"):
        cosang = np.einsum("ij,ij->i", r1, r2) / (np.linalg.norm(r1, axis=1) * np.linalg.norm(r2, axis=1))
    parallax = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    low = at_infinity | (~behind & ~(parallax >= min_parallax_deg))
    status[low] = 2
    status[behind] = 1
    bad = status != 0
    X[bad] = np.nan
    depth = X[:, 2].copy()
    return X, depth, status


def triangulate_pair(K: CameraIntrinsics, rel: Pose, x_prev, x_cur, min_parallax_deg=MIN_PARALLAX_DEG):
    """Triangulate one correspondence; returns ``(point in previous frame, depth)``."""
    X, depth, status = triangulate_pairs(K, rel, [x_prev], [x_cur], min_parallax_deg)
    if status[0] == 1:
        raise BehindCameraError("triangulated point fails cheirality")
    if status[0] == 2:
        raise LowParallaxError(f"ray angle below {min_parallax_deg} deg")
    return X[0], float(depth[0])


def umeyama_align(reference, estimate, with_scale: bool = True):
    """Least-squares ``(s, R, t)`` with ``reference ~ s R estimate + t``."""
    y = np.asarray(reference, dtype=float).reshape(-1, 3)
    x = np.asarray(estimate, dtype=float).reshape(-1, 3)
    if x.shape != y.shape:
        raise DomainError("point sets differ in size")
    n = x.shape[0]
    if n < 3:
        raise AlignmentDegenerateError("need at least 3 point pairs")
    sv = np.linalg.svd(x - x.mean(axis=0), compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-10 * sv[0]:
        raise AlignmentDegenerateError("estimate points are collinear")
    return umeyama_core(y, x, with_scale)


def umeyama_core(y: np.ndarray, x: np.ndarray, with_scale: bool = True):
    """The closed-form solution without degeneracy checks.

    For collinear input the rotation about the common line is arbitrary but
    the result is still a least-squares minimizer.
    """
    n = x.shape[0]
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    cov = yc.T @ xc / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = U @ np.diag(S) @ Vt
    if with_scale:
        var_x = np.sum(xc**2) / n
        if not var_x > 0:
            raise AlignmentDegenerateError("estimate points coincide")
        s = float(np.sum(D * S) / var_x)
    else:
        s = 1.0
    t = my - s * R @ mx
    return s, R, t
