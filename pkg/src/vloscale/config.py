"""Run configuration and its plain-text ``key = value`` file format.

Keys are dotted paths into :class:`RunConfig`, e.g. ``ransac.iterations = 200``
or ``lidar.icp.max_corr_dist = 1.5``; top-level fields take no prefix.
Anything after ``#`` on a line is a comment.  Values are parsed according to
the field's type; ``none`` clears an optional field.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .errors import ConfigurationError, DataError, DomainError
from .image import SelectionConfig, TrackerConfig
from .lidar_odom import MODES, LidarOdomConfig
from .scale import TRIGGER_THRESHOLD, CullingThresholds, RansacConfig

PIPELINE_MODES = ("synthetic", "kitti")
SCENES = ("street", "corridor")
FACADES = ("streaks", "blobs")
TRAJECTORIES = ("straight", "arc", "corridor-detour")
LIDAR_PRESETS = ("hdl64", "vlp16")
TRACKING_SOURCES = ("auto", "exact", "lk")
NOISE_MODELS = ("isotropic", "aperture")
ALIGNMENTS = ("none", "rigid", "similarity")
SEED_MAX = 2**64 - 1


@dataclass(frozen=True)
class ScenarioConfig:
    """Synthetic world and ground-truth path.

    ``facade`` picks the texture of building fronts: ``streaks`` (oblique,
    edge-like, the default) or ``blobs`` (isotropic, which the LK tracker
    can follow in every direction).
    """

    scene: str = "street"
    facade: str = "streaks"
    trajectory: str = "straight"
    frames: int = 200
    speed: float = 10.0
    rate: float = 10.0
    arc_radius: float = 50.0
    corridor_length: float = 40.0
    turn_radius: float = 15.0
    speed_step: float = 1.0
    speed_step_at: float | None = None


@dataclass(frozen=True)
class SensorConfig:
    lidar: str = "hdl64"
    range_noise_sigma: float = 0.0
    azimuth_step: float | None = None


@dataclass(frozen=True)
class DriftConfig:
    """VO drift injected in synthetic mode; see :class:`~vloscale.synth.DriftModel`."""

    kind: str = "constant"
    scale: float = 1.0
    rate: float = 0.0
    sigma: float = 0.0
    rot_noise_sigma: float = 0.0
    trans_noise_sigma: float = 0.0


@dataclass(frozen=True)
class TrackingConfig:
    """Where keyframe correspondences come from.

    ``exact`` uses ray-cast ground-truth matches plus seeded pixel noise
    (synthetic mode only); ``lk`` runs the pyramidal tracker on the images;
    ``auto`` picks ``exact`` when a synthetic scene is available.
    """

    source: str = "auto"
    noise_px: float = 0.0
    noise_model: str = "isotropic"
    aperture_ratio: float = 0.0


@dataclass(frozen=True)
class KittiConfig:
    sequence: str = ""
    vo_trajectory: str = ""
    first: int = 0
    count: int = 0


@dataclass(frozen=True)
class RunConfig:
    mode: str = "synthetic"
    seed: int = 0
    keyframe_stride: int = 2
    trigger_threshold: float = TRIGGER_THRESHOLD
    min_parallax_deg: float = 0.5
    odom_mode: str = "bootstrap"
    lidar_odometry: bool = True
    align: str = "rigid"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    drift: DriftConfig = field(default_factory=DriftConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    culling: CullingThresholds = field(default_factory=CullingThresholds)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    lidar: LidarOdomConfig = field(default_factory=LidarOdomConfig)
    kitti: KittiConfig = field(default_factory=KittiConfig)


_CHOICES = {
    "mode": PIPELINE_MODES,
    "odom_mode": MODES,
    "align": ALIGNMENTS,
    "scenario.scene": SCENES,
    "scenario.facade": FACADES,
    "scenario.trajectory": TRAJECTORIES,
    "sensor.lidar": LIDAR_PRESETS,
    "drift.kind": ("constant", "linear", "random_walk"),
    "tracking.source": TRACKING_SOURCES,
    "tracking.noise_model": NOISE_MODELS,
}

# (key, lower, upper, lower bound inclusive)
_RANGES = [
    ("keyframe_stride", 1, None, True),
    ("trigger_threshold", 0.0, 1.0, True),
    ("min_parallax_deg", 0.0, 90.0, True),
    ("scenario.frames", 2, None, True),
    ("scenario.speed", 0.0, None, False),
    ("scenario.rate", 0.0, None, False),
    ("scenario.speed_step", 0.0, None, False),
    ("sensor.range_noise_sigma", 0.0, None, True),
    ("drift.scale", 0.0, None, False),
    ("drift.sigma", 0.0, None, True),
    ("tracking.noise_px", 0.0, None, True),
    ("tracking.aperture_ratio", 0.0, 1.0, True),
    ("culling.max_normal_error", 0.0, None, False),
    ("culling.min_abs_cos", 0.0, 1.0, True),
    ("ransac.iterations", 1, None, True),
    ("ransac.inlier_tol", 0.0, 1.0, False),
    ("ransac.min_samples", 1, None, True),
    ("ransac.min_inliers", 1, None, True),
    ("lidar.voxel_size", 0.0, None, True),
    ("lidar.source_stride", 1, None, True),
    ("lidar.normal_k", 3, None, True),
    ("lidar.normal_radius", 0.0, None, False),
    ("lidar.icp.max_corr_dist", 0.0, None, False),
    ("lidar.icp.max_iters", 1, None, True),
    ("lidar.icp.min_correspondences", 1, None, True),
    ("kitti.first", 0, None, True),
    ("kitti.count", 0, None, True),
]


def _get(cfg, key: str):
    obj = cfg
    for part in key.split("."):
        obj = getattr(obj, part)
    return obj


def validate(cfg: RunConfig) -> RunConfig:
    """Raise :class:`ConfigurationError` for out-of-range or unknown choices."""
    for key, allowed in _CHOICES.items():
        if _get(cfg, key) not in allowed:
            raise ConfigurationError(f"{key} must be one of {allowed}, got {_get(cfg, key)!r}")
    for key, lo, hi, closed in _RANGES:
        v = _get(cfg, key)
        if lo is not None and (v < lo if closed else v <= lo):
            raise ConfigurationError(f"{key} = {v} below {'' if closed else 'or at '}{lo}")
        if hi is not None and v > hi:
            raise ConfigurationError(f"{key} = {v} above {hi}")
    if cfg.ransac.min_inliers > cfg.ransac.min_samples:
        raise ConfigurationError("ransac.min_inliers cannot exceed ransac.min_samples")
    if not 0 <= cfg.seed <= SEED_MAX:
        raise ConfigurationError("seed must be an unsigned 64-bit integer")
    return cfg


def _is_optional(tp) -> tuple[bool, object]:
    args = typing.get_args(tp)
    if typing.get_origin(tp) in (typing.Union, types.UnionType) and type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return True, rest[0]
    return False, tp


def coerce(text: str, tp, key: str = "value"):
    """Parse ``text`` as type ``tp`` (bool, int, float, str or Optional of those)."""
    optional, tp = _is_optional(tp)
    raw = text.strip()
    if optional and raw.lower() == "none":
        return None
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw, 0)
        if tp is float:
            return float(raw)
        if tp is str:
            if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "'\"":
                return raw[1:-1]
            return raw
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {tp.__name__}") from exc
    raise ConfigurationError(f"{key}: unsupported field type {tp!r}")


def set_key(cfg, key: str, value: str, _prefix: str = ""):
    """Return a copy of ``cfg`` with the dotted ``key`` set from its text ``value``."""
    head, _, rest = key.partition(".")
    full = _prefix + key
    if head not in {f.name for f in fields(cfg)}:
        raise ConfigurationError(f"unknown key {full!r}")
    current = getattr(cfg, head)
    if rest:
        if not is_dataclass(current):
            raise ConfigurationError(f"unknown key {full!r}")
        new = set_key(current, rest, value, _prefix + head + ".")
    else:
        if is_dataclass(current):
            raise ConfigurationError(f"{full!r} is a section, not a value")
        new = coerce(value, typing.get_type_hints(type(cfg))[head], full)
    try:
        return replace(cfg, **{head: new})
    except DomainError as exc:
        raise ConfigurationError(f"{full}: {exc}") from exc
    except ConfigurationError as exc:
        if rest:
            raise
        raise ConfigurationError(f"{full}: {exc}") from exc


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    cfg = base or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        try:
            cfg = set_key(cfg, key.strip(), value)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{source}:{lineno}: {exc}") from exc
    return validate(cfg)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base, str(path))


def config_items(cfg) -> list[tuple[str, object]]:
    """Flattened ``(dotted_key, value)`` pairs in declaration order."""
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if is_dataclass(v):
            out += [(f"{f.name}.{k}", x) for k, x in config_items(v)]
        else:
            out.append((f.name, v))
    return out


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg) -> str:
    """Text that :func:`parse_config` reads back to an equal configuration."""
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in config_items(cfg))


def config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
