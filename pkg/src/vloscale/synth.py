"""Synthetic world with ground truth.

Scenes are sets of textured rectangles (possibly infinite).  Textures are
seeded multi-octave value noise anchored in plane coordinates, so the same
surface point has the same intensity from every viewpoint.  World frame is
z up; camera poses are camera-to-world with the camera looking along the
direction of travel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError
from .geometry import CameraIntrinsics, PointCloud, Pose
from .image import ImageGray

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xC2B2AE3D27D4EB4F)
_M3 = np.uint64(0x165667B19E3779F9)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _lattice_values(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic hash of integer lattice coordinates to [0, 1)."""
    with np.errstate(over="ignore"):
        h = ix.astype(np.int64).view(np.uint64) * _M1
        h ^= iy.astype(np.int64).view(np.uint64) * _M2
        h ^= np.uint64(seed & 0xFFFFFFFF) * _M3
        h ^= h >> np.uint64(30)
        h *= _MIX1
        h ^= h >> np.uint64(27)
        h *= _MIX2
        h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _fade(t):
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise(x: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    """Single octave of smooth value noise in [-1, 1] with unit lattice spacing."""
    fx, fy = np.floor(x), np.floor(y)
    ix, iy = fx.astype(np.int64), fy.astype(np.int64)
    tx, ty = _fade(x - fx), _fade(y - fy)
    v00 = _lattice_values(ix, iy, seed)
    v10 = _lattice_values(ix + 1, iy, seed)
    v01 = _lattice_values(ix, iy + 1, seed)
    v11 = _lattice_values(ix + 1, iy + 1, seed)
    top = v00 + (v10 - v00) * tx
    bot = v01 + (v11 - v01) * tx
    return 2.0 * (top + (bot - top) * ty) - 1.0


@dataclass(frozen=True)
class Texture:
    """Value-noise texture; ``cell`` is the coarsest lattice spacing in meters."""

    seed: int = 0
    cell: float = 0.5
    octaves: int = 3
    persistence: float = 0.5
    mean: float = 128.0
    contrast: float = 110.0
    stretch: float = 1.0
    angle: float = 0.0

    def sample(self, a: np.ndarray, b: np.ndarray, pixel_cell: np.ndarray | None = None) -> np.ndarray:
        """Intensities at plane coordinates ``(a, b)``.

        ``pixel_cell`` is the on-screen size in pixels of one meter; detail
        finer than about a pixel is faded out to avoid aliasing.
        """
        if self.stretch != 1.0:
            # elongate features along direction ``angle`` (degrees)
            c, s_ = np.cos(np.radians(self.angle)), np.sin(np.radians(self.angle))
            a, b = (c * a + s_ * b) / self.stretch, -s_ * a + c * b
        total = np.zeros_like(a, dtype=float)
        norm = 0.0
        amp = 1.0
        cell = self.cell
        for k in range(self.octaves):
            octave = value_noise(a / cell, b / cell, self.seed * 7919 + k)
            if pixel_cell is not None:
                w = np.clip(cell * pixel_cell - 1.0, 0.0, 1.0)
                octave = octave * w
            total += amp * octave
            norm += amp
            amp *= self.persistence
            cell /= 2.0
        n = total / norm
        return np.clip(self.mean + self.contrast * n, 0.0, 255.0)


@dataclass(frozen=True, eq=False)
class Plane:
    """Rectangle centered at ``anchor`` spanning ``extents`` along ``u_axis`` and ``normal x u_axis``."""

    anchor: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    extents: tuple = (np.inf, np.inf)
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        u = np.asarray(self.u_axis, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise DomainError("plane normal must be unit length")
        u = u - n * (u @ n)
        if np.linalg.norm(u) < 1e-9:
            raise DomainError("u_axis parallel to the normal")
        if not (self.extents[0] > 0 and self.extents[1] > 0):
            raise DomainError("plane extents must be positive")
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "u_axis", u / np.linalg.norm(u))

    @property
    def w_axis(self) -> np.ndarray:
        return np.cross(self.normal, self.u_axis)

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.extents[0]) and np.isfinite(self.extents[1]))

    @property
    def radius(self) -> float:
        return float(np.hypot(self.extents[0], self.extents[1]) / 2.0)

    def plane_coords(self, points: np.ndarray):
        rel = points - self.anchor
        return rel @ self.u_axis, rel @ self.w_axis


@dataclass(frozen=True)
class Scene:
    planes: tuple = ()
    background_intensity: int = 60


def plane_z0_scene(texture: Texture | None = None) -> Scene:
    return Scene((Plane((0, 0, 0), (0, 0, 1), (1, 0, 0), texture=texture or Texture(seed=1)),))


def cast_rays(scene: Scene, origin, dirs: np.ndarray, max_t: float = np.inf):
    """Nearest plane hit per ray: ``(t, plane_index)``; misses get ``inf`` and -1."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(dirs, dtype=float).reshape(-1, 3)
    best_t = np.full(d.shape[0], np.inf)
    best_i = np.full(d.shape[0], -1, dtype=np.int64)
    dnorm = np.linalg.norm(d, axis=1)
    for pi, pl in enumerate(scene.planes):
        rows = None
        if pl.finite:
            to_c = pl.anchor - o
            dist = np.linalg.norm(to_c)
            r = pl.radius
            if dist - r > max_t * dnorm.max():
                continue
            if dist > r:
                cos_lim = np.sqrt(1.0 - (r / dist) ** 2)
                rows = np.flatnonzero(d @ to_c >= cos_lim * dist * dnorm)
                if rows.size == 0:
                    continue
        dd = d if rows is None else d[rows]
        denom = dd @ pl.normal
        num = (pl.anchor - o) @ pl.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        ok = np.isfinite(t) & (t > 1e-9)
        if pl.finite or np.isfinite(pl.extents[0]) or np.isfinite(pl.extents[1]):
            hit = o + dd * np.where(ok, t, 0.0)[:, None]
            a, b = pl.plane_coords(hit)
            ok &= (np.abs(a) <= pl.extents[0] / 2.0) & (np.abs(b) <= pl.extents[1] / 2.0)
        cur = best_t if rows is None else best_t[rows]
        better = ok & (t < cur)
        if rows is None:
            best_t[better] = t[better]
            best_i[better] = pi
        else:
            best_t[rows[better]] = t[better]
            best_i[rows[better]] = pi
    return best_t, best_i


def pixel_rays(K: CameraIntrinsics, pixels=None) -> np.ndarray:
    """Camera-frame rays with unit z for pixels (default: every pixel, row-major)."""
    if pixels is None:
        u, v = np.meshgrid(np.arange(K.width, dtype=float), np.arange(K.height, dtype=float))
        u, v = u.ravel(), v.ravel()
    else:
        p = np.asarray(pixels, dtype=float).reshape(-1, 2)
        u, v = p[:, 0], p[:, 1]
    return np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=1)


def render_image(scene: Scene, K: CameraIntrinsics, cam_pose: Pose, max_depth: float = 200.0) -> ImageGray:
    """Ray-cast the scene from a camera-to-world pose."""
    rays_c = pixel_rays(K)
    rays_w = rays_c @ cam_pose.rotation.T
    t, idx = cast_rays(scene, cam_pose.translation, rays_w, max_depth)
    out = np.full(t.shape[0], float(scene.background_intensity))
    hit = np.flatnonzero((idx >= 0) & (t <= max_depth))
    if hit.size:
        pts = cam_pose.translation + rays_w[hit] * t[hit, None]
        ray_len = np.linalg.norm(rays_w[hit], axis=1)
        for pi in np.unique(idx[hit]):
            sel = idx[hit] == pi
            pl = scene.planes[pi]
            rows = hit[sel]
            a, b = pl.plane_coords(pts[sel])
            cos_inc = np.abs(rays_w[rows] @ pl.normal) / ray_len[sel]
            # geometric mean of the on-screen scale along and across the foreshortening
            px_per_m = min(K.fx, K.fy) * np.sqrt(cos_inc) / (t[rows] * ray_len[sel])
            out[rows] = pl.texture.sample(a, b, px_per_m)
    return ImageGray(np.rint(out).reshape(K.height, K.width).astype(np.uint8))


def cast_camera_ray(scene: Scene, K: CameraIntrinsics, cam_pose: Pose, pixel):
    """World point seen at ``pixel`` (or None)."""
    rays_w = pixel_rays(K, [pixel]) @ cam_pose.rotation.T
    t, idx = cast_rays(scene, cam_pose.translation, rays_w)
    if idx[0] < 0:
        return None
    return cam_pose.translation + rays_w[0] * t[0]


@dataclass(frozen=True)
class LidarModel:
    """Spinning multi-beam LiDAR in a camera-like frame (x right, y down, z forward)."""

    beam_count: int = 64
    vertical_fov: tuple = (-24.8, 2.0)
    azimuth_step: float = 0.1
    range_noise_sigma: float = 0.0
    max_range: float = 80.0
    min_range: float = 0.5

    def __post_init__(self):
        if self.beam_count < 1:
            raise DomainError("beam_count must be >= 1")
        if not self.azimuth_step > 0:
            raise DomainError("azimuth_step must be positive")
        if not self.max_range > 0:
            raise DomainError("max_range must be positive")

    def elevations(self) -> np.ndarray:
        lo, hi = self.vertical_fov
        if self.beam_count == 1:
            return np.array([np.radians((lo + hi) / 2.0)])
        return np.radians(np.linspace(lo, hi, self.beam_count))

    def directions(self):
        """Unit ray directions in the sensor frame and their beam index."""
        el = self.elevations()
        az = np.radians(np.arange(0.0, 360.0, self.azimuth_step))
        E, A = np.meshgrid(el, az, indexing="ij")
        dirs = np.stack([np.cos(E) * np.sin(A), -np.sin(E), np.cos(E) * np.cos(A)], axis=-1).reshape(-1, 3)
        beam = np.repeat(np.arange(self.beam_count), az.size)
        return dirs, beam


HDL64 = LidarModel()
VLP16 = LidarModel(beam_count=16, vertical_fov=(-15.0, 15.0), azimuth_step=0.2)


def simulate_scan(scene: Scene, model: LidarModel, lidar_pose: Pose, seed: int = 0, timestamp: float = 0.0) -> PointCloud:
    """One revolution; returns hits in the sensor frame tagged with beam index."""
    dirs, beam = model.directions()
    dirs_w = dirs @ lidar_pose.rotation.T
    t, idx = cast_rays(scene, lidar_pose.translation, dirs_w, model.max_range)
    hit = (idx >= 0) & (t <= model.max_range) & (t >= model.min_range)
    r = t[hit]
    if model.range_noise_sigma > 0:
        rng = np.random.default_rng(seed)
        r = r + rng.normal(0.0, model.range_noise_sigma, size=r.shape)
    return PointCloud(dirs[hit] * r[:, None], timestamp, beam[hit], model.beam_count)


def camera_pose_at(position, heading: float) -> Pose:
    """Camera-to-world pose looking along ``heading`` (radians from +x) with level horizon."""
    f = np.array([np.cos(heading), np.sin(heading), 0.0])
    right = np.array([np.sin(heading), -np.cos(heading), 0.0])
    down = np.array([0.0, 0.0, -1.0])
    return Pose(np.stack([right, down, f], axis=1), position)


def _path_point(kind: str, s: float, radius: float, corridor_length: float, turn_radius: float):
    if kind == "straight":
        return np.array([s, 0.0]), 0.0
    if kind == "arc":
        ang = s / radius
        return np.array([radius * np.sin(ang), radius * (1.0 - np.cos(ang))]), ang
    if s <= corridor_length:
        return np.array([s, 0.0]), 0.0
    turn_len = turn_radius * np.pi / 2.0
    ds = s - corridor_length
    if ds <= turn_len:
        ang = ds / turn_radius
        return np.array([corridor_length + turn_radius * np.sin(ang), turn_radius * (1.0 - np.cos(ang))]), ang
    return np.array([corridor_length + turn_radius, turn_radius + ds - turn_len]), np.pi / 2.0


def generate_trajectory(
    kind: str,
    length: float,
    speed: float,
    rate: float,
    *,
    radius: float = 50.0,
    height: float = 1.6,
    corridor_length: float | None = None,
    turn_radius: float = 15.0,
    speed_step: float = 1.0,
    speed_step_at: float | None = None,
):
    """Ground-truth camera poses ``[(timestamp, Pose)]`` sampled at ``rate``.

    ``speed_step`` multiplies the speed once the travelled distance reaches
    ``speed_step_at`` meters.
    """
    if not (length > 0 and speed > 0 and rate > 0):
        raise DomainError("length, speed and rate must be positive")
    if kind not in ("straight", "arc", "corridor-detour"):
        raise DomainError(f"unknown trajectory kind {kind!r}")
    if kind == "arc" and not radius > 0:
        raise DomainError("arc radius must be positive")
    if not speed_step > 0:
        raise DomainError("speed_step must be positive")
    if corridor_length is None:
        corridor_length = 0.6 * length
    dt = 1.0 / rate
    out = []
    k = 0
    s = 0.0
    while True:
        xy, heading = _path_point(kind, s, radius, corridor_length, turn_radius)
        out.append((k * dt, camera_pose_at([xy[0], xy[1], height], heading)))
        v = speed
        if speed_step_at is not None and s >= speed_step_at - 1e-9:
            v = speed * speed_step
        k += 1
        if speed_step_at is None:
            s = k * speed * dt
        else:
            s = s + v * dt
        if s > length + 1e-9:
            break
    return out


@dataclass(frozen=True)
class DriftModel:
    """Per-step multiplicative scale on VO relative translation, plus pose noise.

    ``kind`` selects the scale function: ``constant`` (``scale``),
    ``linear`` (``scale + rate * distance``) or ``random_walk``
    (log-scale random walk with per-step ``sigma``).
    """

    kind: str = "constant"
    scale: float = 1.0
    rate: float = 0.0
    sigma: float = 0.0
    rot_noise_sigma: float = 0.0
    trans_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "random_walk"):
            raise DomainError(f"unknown drift kind {self.kind!r}")
        if not self.scale > 0:
            raise DomainError("drift scale must be positive")

    def factors(self, distances: np.ndarray) -> np.ndarray:
        """Scale factor for each step, given distance travelled at the start of the step."""
        n = len(distances)
        if self.kind == "constant":
            f = np.full(n, self.scale)
        elif self.kind == "linear":
            f = self.scale + self.rate * np.asarray(distances, dtype=float)
        else:
            rng = np.random.default_rng([self.seed, 1])
            f = self.scale * np.exp(np.cumsum(rng.normal(0.0, self.sigma, size=n)))
        if np.any(f <= 0):
            raise DomainError("drift scale function must stay positive")
        return f


def inject_vo_drift(gt, model: DriftModel):
    """Rebuild ``gt`` from perturbed relative motions; the first pose is unchanged."""
    if len(gt) < 2:
        raise DomainError("need at least two poses")
    poses = [p for _, p in gt]
    rels = [poses[k - 1].inverse() @ poses[k] for k in range(1, len(poses))]
    steps = np.array([np.linalg.norm(r.translation) for r in rels])
    dist = np.concatenate([[0.0], np.cumsum(steps)[:-1]])
    f = model.factors(dist)
    rng = np.random.default_rng([model.seed, 2])
    out = [(gt[0][0], poses[0])]
    cur = poses[0]
    for k, rel in enumerate(rels):
        t = rel.translation * f[k]
        rot = rel
        if model.trans_noise_sigma > 0:
            t = t + rng.normal(0.0, model.trans_noise_sigma, size=3)
        if model.rot_noise_sigma > 0:
            rot = rel @ Pose.from_rotvec(np.radians(rng.normal(0.0, model.rot_noise_sigma, size=3)))
        cur = cur @ Pose(rot.rotation, t)
        out.append((gt[k + 1][0], cur))
    return out


def exact_correspondences(scene: Scene, K: CameraIntrinsics, pose_a: Pose, pose_b: Pose, pixels_a, tol: float = 1e-6):
    """Noise-free matches of pixels in camera ``a`` into camera ``b``.

    Returns ``(pixels_b, depth_a, visible)``; ``visible`` is False when the
    surface point is missed, behind ``b``, outside ``b``'s image or occluded.
    """
    pa = np.asarray(pixels_a, dtype=float).reshape(-1, 2)
    rays_a = pixel_rays(K, pa) @ pose_a.rotation.T
    t_a, idx_a = cast_rays(scene, pose_a.translation, rays_a)
    visible = idx_a >= 0
    X = pose_a.translation + rays_a * np.where(visible, t_a, 0.0)[:, None]
    Xb = pose_b.inverse().apply(X)
    z = Xb[:, 2]
    visible &= z > 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        pb = np.stack([K.fx * Xb[:, 0] / z + K.cx, K.fy * Xb[:, 1] / z + K.cy], axis=1)
    visible &= K.contains(pb)
    to_x = X - pose_b.translation
    t_b, _ = cast_rays(scene, pose_b.translation, to_x)
    visible &= t_b >= 1.0 - tol
    depth_a = np.where(visible, t_a, np.nan)
    pb[~visible] = np.nan
    return pb, depth_a, visible


# Scene builders -----------------------------------------------------------

# Facades carry oblique streaks: strong diagonal gradients but few isolated
# blobs, so they pass the 4-probe pre-test far more often than FAST-9.
WALL_TEXTURE = Texture(cell=0.3, octaves=2, contrast=127.0, stretch=30.0, angle=45.0)
GROUND_TEXTURE = Texture(cell=1.0, octaves=2, contrast=80.0)
# isotropic alternative: trackable by a window-based tracker in every direction
BLOB_TEXTURE = Texture(cell=0.5, octaves=3, contrast=110.0)
BOX_TEXTURE = Texture(cell=1.0, octaves=1, mean=170.0, contrast=0.0)


def street_scene(length: float = 200.0, seed: int = 0, half_width: float = 8.0, wall_height: float = 12.0,
                 box_spacing: float = 20.0, wall_texture: Texture = WALL_TEXTURE,
                 ground_texture: Texture = GROUND_TEXTURE, box_texture: Texture = BOX_TEXTURE) -> Scene:
    """Straight street along +x: ground, two facades and boxes jutting out of the facades."""
    x0, x1 = -60.0, length + 120.0
    cx, ex = (x0 + x1) / 2.0, x1 - x0
    planes = [
        Plane((cx, 0, 0), (0, 0, 1), (1, 0, 0), (ex, 4 * half_width), replace(ground_texture, seed=seed * 101 + 1)),
        Plane((cx, half_width, wall_height / 2), (0, -1, 0), (1, 0, 0), (ex, wall_height), replace(wall_texture, seed=seed * 101 + 2)),
        Plane((cx, -half_width, wall_height / 2), (0, 1, 0), (1, 0, 0), (ex, wall_height), replace(wall_texture, seed=seed * 101 + 3)),
    ]
    planes += _boxes(np.arange(x0 + box_spacing / 2, x1, box_spacing), half_width, wall_height, seed, box_texture)
    return Scene(tuple(planes))


def _boxes(xs, half_width, height, seed, texture, depth=1.2, width=1.5):
    planes = []
    for i, x in enumerate(xs):
        side = 1.0 if i % 2 == 0 else -1.0
        y_face = side * (half_width - depth)
        y_mid = side * (half_width - depth / 2.0)
        tex = replace(texture, seed=seed * 101 + 10 + i)
        planes.append(Plane((x, y_face, height / 2), (0, -side, 0), (1, 0, 0), (width, height), tex))
        planes.append(Plane((x - width / 2, y_mid, height / 2), (-1, 0, 0), (0, 1, 0), (depth, height), tex))
        planes.append(Plane((x + width / 2, y_mid, height / 2), (1, 0, 0), (0, 1, 0), (depth, height), tex))
    return planes


def corridor_scene(corridor_length: float, turn_radius: float = 15.0, exit_length: float = 80.0, seed: int = 0,
                   half_width: float = 4.0, wall_height: float = 6.0, structure_texture: Texture = WALL_TEXTURE) -> Scene:
    """Texture-poor corridor along +x, then an open structured area after a left turn.

    The corridor walls and ground constrain nothing along x, which is the
    degenerate direction for scan registration.
    """
    plain = Texture(seed=0, cell=2.0, octaves=1, contrast=2.0)
    ground = replace(GROUND_TEXTURE, seed=seed * 101 + 1)
    ex = corridor_length + 200.0
    planes = [
        Plane((corridor_length / 2, 0, 0), (0, 0, 1), (1, 0, 0), (ex, ex), ground),
        Plane((corridor_length / 2 - 40.0, half_width, wall_height / 2), (0, -1, 0), (1, 0, 0),
              (corridor_length + 80.0, wall_height), replace(plain, seed=seed * 101 + 2)),
        Plane((corridor_length / 2 - 40.0, -half_width, wall_height / 2), (0, 1, 0), (1, 0, 0),
              (corridor_length + 80.0, wall_height), replace(plain, seed=seed * 101 + 3)),
    ]
    # structured area beside the exit leg (x = corridor_length + turn_radius, heading +y)
    exit_x = corridor_length + turn_radius
    ys = np.arange(turn_radius + 5.0, turn_radius + exit_length, 10.0)
    for i, y in enumerate(ys):
        for side in (-1.0, 1.0):
            c = np.array([exit_x + side * 7.0, y, wall_height / 2])
            tex = replace(structure_texture, seed=seed * 101 + 20 + 2 * i + (side > 0))
            planes.append(Plane(c, (0, 1, 0), (1, 0, 0), (3.0, wall_height), tex))
            planes.append(Plane(c + [0, 1.0, 0], (1, 0, 0), (0, 1, 0), (2.0, wall_height), tex))
    planes.append(Plane((exit_x, turn_radius + exit_length + 20.0, wall_height), (0, -1, 0), (1, 0, 0),
                        (60.0, 2 * wall_height), replace(structure_texture, seed=seed * 101 + 9)))
    return Scene(tuple(planes))


@dataclass(frozen=True)
class SensorRig:
    """Camera intrinsics, LiDAR-to-camera extrinsics and LiDAR model."""

    K: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(240.0, 240.0, 160.0, 120.0, 320, 240))
    T_L_C: Pose = field(default_factory=lambda: Pose(np.eye(3), (0.1, 0.0, 0.0)))
    lidar: LidarModel = HDL64

    def lidar_pose(self, cam_pose: Pose) -> Pose:
        """LiDAR-to-world pose for a camera-to-world pose."""
        return cam_pose @ self.T_L_C

    def capture(self, scene: Scene, cam_pose: Pose, seed: int = 0, timestamp: float = 0.0):
        img = render_image(scene, self.K, cam_pose)
        cloud = simulate_scan(scene, self.lidar, self.lidar_pose(cam_pose), seed=seed, timestamp=timestamp)
        return img, cloud
