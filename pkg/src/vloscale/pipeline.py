"""The frame loop: scale-corrected VO and visually bootstrapped LiDAR odometry.

Frames come from a *source* (synthetic world or KITTI-layout sequence) that
also supplies the drifting VO pose of each frame.  At every keyframe the
previous keyframe's scan is projected into its image, the selected
keypoints are tracked into the current keyframe and the LiDAR/visual depth
ratio rescales the VO from then on.  Every frame's scan is registered
against the previous one, starting from the corrected VO motion.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, config_dict, validate
from .errors import (ConfigurationError, DataError, DomainError, EstimationError, OutOfRangeError,
                     RegistrationError)
from .evaluation import EvalReport, full_report
from .frames import FrameBundle
from .geometry import CameraIntrinsics, KeypointSet, Pose, project_cloud
from .image import build_pyramid, gradients_at, lk_track, read_image, select_keypoints
from .kitti import image_path, load_kitti_frame, open_sequence, read_calib
from .lidar_odom import OdomState, lidar_odometry_step, prepare_target
from .scale import (
    LocalMap,
    MatchedPairs,
    ScaleEstimate,
    ScaleSamples,
    apply_scale_correction,
    compute_scale_samples,
    cull_matches,
    ransac_scale,
    should_correct,
)
from .synth import (
    BLOB_TEXTURE,
    HDL64,
    VLP16,
    WALL_TEXTURE,
    DriftModel,
    Scene,
    SensorRig,
    corridor_scene,
    exact_correspondences,
    generate_trajectory,
    inject_vo_drift,
    render_image,
    simulate_scan,
    street_scene,
)
from .trajectory import Trajectory, interpolate_trajectory, read_trajectory, write_trajectory


def subseed(*keys: int) -> int:
    """A 32-bit seed derived from a tuple of integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# Frame sources -------------------------------------------------------------


class ListSource:
    """In-memory frames; the VO pose of every frame must be set."""

    def __init__(self, frames, K: CameraIntrinsics, T_L_C: Pose):
        self.frames = list(frames)
        self.K = K
        self.T_L_C = T_L_C
        self.scene = None

    def __len__(self):
        return len(self.frames)

    def timestamp(self, i: int) -> float:
        return self.frames[i].timestamp

    def vo_pose(self, i: int) -> Pose:
        return self.frames[i].vo_pose

    def gt_pose(self, i: int) -> Pose | None:
        return self.frames[i].gt_pose

    def frame(self, i: int) -> FrameBundle:
        return self.frames[i]


def build_scene(cfg: RunConfig, path_length: float) -> Scene:
    sc = cfg.scenario
    facade = WALL_TEXTURE if sc.facade == "streaks" else BLOB_TEXTURE
    if sc.scene == "street":
        return street_scene(length=path_length, seed=cfg.seed, wall_texture=facade)
    return corridor_scene(sc.corridor_length, turn_radius=sc.turn_radius, seed=cfg.seed, structure_texture=facade)


def lidar_model(cfg: RunConfig):
    base = HDL64 if cfg.sensor.lidar == "hdl64" else VLP16
    model = replace(base, range_noise_sigma=cfg.sensor.range_noise_sigma)
    if cfg.sensor.azimuth_step is not None:
        model = replace(model, azimuth_step=cfg.sensor.azimuth_step)
    return model


def ground_truth_path(cfg: RunConfig) -> list[tuple[float, Pose]]:
    """``cfg.scenario.frames`` ground-truth camera poses."""
    sc = cfg.scenario
    top = sc.speed * max(1.0, sc.speed_step)
    length = (sc.frames + 1) * top / sc.rate
    gt = generate_trajectory(
        sc.trajectory, length, sc.speed, sc.rate, radius=sc.arc_radius, corridor_length=sc.corridor_length,
        turn_radius=sc.turn_radius, speed_step=sc.speed_step, speed_step_at=sc.speed_step_at,
    )
    return gt[: sc.frames]


class SyntheticSource:
    """Rendered frames along a generated path, with drift-injected VO."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        gt = ground_truth_path(cfg)
        pos = np.array([p.translation for _, p in gt])
        path_length = float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))
        self.scene = build_scene(cfg, path_length)
        self.rig = SensorRig(lidar=lidar_model(cfg))
        self.K, self.T_L_C = self.rig.K, self.rig.T_L_C
        d = cfg.drift
        drift = DriftModel(d.kind, d.scale, d.rate, d.sigma, d.rot_noise_sigma, d.trans_noise_sigma, seed=cfg.seed)
        self.gt = gt
        self.vo = inject_vo_drift(gt, drift)

    def __len__(self):
        return len(self.gt)

    def timestamp(self, i: int) -> float:
        return self.gt[i][0]

    def vo_pose(self, i: int) -> Pose:
        return self.vo[i][1]

    def gt_pose(self, i: int) -> Pose:
        return self.gt[i][1]

    def frame(self, i: int) -> FrameBundle:
        t, pose = self.gt[i]
        img = render_image(self.scene, self.K, pose)
        cloud = simulate_scan(self.scene, self.rig.lidar, self.rig.lidar_pose(pose), seed=subseed(self.cfg.seed, 4, i),
                              timestamp=t)
        return FrameBundle(i, t, img, cloud, self.vo[i][1], pose)


class KittiSource:
    """A KITTI-layout sequence plus an externally produced VO trajectory file."""

    def __init__(self, cfg: RunConfig):
        kc = cfg.kitti
        if not kc.sequence or not kc.vo_trajectory:
            raise ConfigurationError("kitti mode needs kitti.sequence and kitti.vo_trajectory")
        self.dir = Path(kc.sequence)
        size = read_image(image_path(self.dir, kc.first)).data.shape[::-1]
        _, times, gt = open_sequence(self.dir)
        calib = read_calib(self.dir, size)
        self.K, self.T_L_C = calib.K, calib.T_L_C
        self.scene = None
        stop = len(times) if kc.count == 0 else min(len(times), kc.first + kc.count)
        self.indices = list(range(kc.first, stop))
        self.times = times
        self.all_gt = gt
        vo = read_trajectory(kc.vo_trajectory)
        try:
            self.vo = interpolate_trajectory(vo, [times[i] for i in self.indices]).poses
        except OutOfRangeError as exc:
            raise DataError(f"VO trajectory does not cover the sequence: {exc}") from exc

    def __len__(self):
        return len(self.indices)

    def timestamp(self, i: int) -> float:
        return float(self.times[self.indices[i]])

    def vo_pose(self, i: int) -> Pose:
        return self.vo[i]

    def gt_pose(self, i: int) -> Pose | None:
        k = self.indices[i]
        return None if self.all_gt is None or k >= len(self.all_gt) else self.all_gt[k]

    def frame(self, i: int) -> FrameBundle:
        f = load_kitti_frame(self.dir, self.indices[i], self.times, self.all_gt)
        return replace(f, index=i, vo_pose=self.vo[i])


def open_source(cfg: RunConfig):
    return SyntheticSource(cfg) if cfg.mode == "synthetic" else KittiSource(cfg)


# Keyframe measurement ------------------------------------------------------


def keyframe_keypoints(frame: FrameBundle, K: CameraIntrinsics, T_L_C: Pose, cfg: RunConfig) -> KeypointSet:
    """Project the frame's scan into its own image and select keypoints."""
    return select_keypoints(project_cloud(K, T_L_C, frame.cloud), frame.image, cfg.selection)


def add_tracking_noise(pixels: np.ndarray, grad: np.ndarray, sigma: float, model: str,
                       rng: np.random.Generator, aperture_ratio: float = 0.0) -> np.ndarray:
    """Perturb tracked pixels.

    ``isotropic`` adds N(0, sigma^2) per axis.  ``aperture`` mimics a
    gradient-based tracker on edge-like texture: the error lies mostly along
    the isophote, where the patch carries no information, with
    ``aperture_ratio`` times that spread along the gradient.  Both models
    have the same mean squared error, 2 sigma^2.  Points without a usable
    gradient get isotropic noise.
    """
    n = pixels.shape[0]
    if sigma <= 0 or n == 0:
        return pixels.copy()
    z = rng.normal(size=(n, 2))
    if model == "isotropic":
        return pixels + sigma * z
    g = np.nan_to_num(grad)
    gn = np.hypot(g[:, 0], g[:, 1])
    has = gn > 1e-9
    along = np.where(has[:, None], g / np.where(has, gn, 1.0)[:, None], [1.0, 0.0])
    across = np.stack([-along[:, 1], along[:, 0]], axis=1)
    s_iso = sigma * np.sqrt(2.0 / (1.0 + aperture_ratio**2))
    s_along = np.where(has, aperture_ratio * s_iso, sigma)
    s_across = np.where(has, s_iso, sigma)
    return pixels + (s_along * z[:, 0])[:, None] * along + (s_across * z[:, 1])[:, None] * across


def track_keypoints(source, cfg: RunConfig, prev: FrameBundle, cur: FrameBundle, kps: KeypointSet,
                    pyramids=None) -> MatchedPairs:
    """Correspondences of ``kps`` (in ``prev``) in the current image, as matched pairs."""
    K = source.K
    if len(kps) == 0:
        return MatchedPairs(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 2)))
    has_truth = source.scene is not None and prev.gt_pose is not None and cur.gt_pose is not None
    method = cfg.tracking.source
    if method == "auto":
        method = "exact" if has_truth else "lk"
    if method == "exact":
        if not has_truth:
            raise ConfigurationError("exact tracking needs a synthetic scene with ground truth")
        x_cur, _, ok = exact_correspondences(source.scene, K, prev.gt_pose, cur.gt_pose, kps.pixels)
        x_cur = np.where(ok[:, None], x_cur, 0.0)
        grad = gradients_at(cur.image, x_cur)
        rng = np.random.default_rng(subseed(cfg.seed, 3, cur.index))
        x_cur = add_tracking_noise(x_cur, grad, cfg.tracking.noise_px, cfg.tracking.noise_model, rng,
                                   cfg.tracking.aperture_ratio)
    else:
        levels = cfg.tracker.levels
        p_prev, p_cur = pyramids or (build_pyramid(prev.image, levels), build_pyramid(cur.image, levels))
        tracks = lk_track(p_prev, p_cur, kps.pixels, cfg.tracker)
        x_cur, ok = tracks.cur, tracks.ok
    ok = ok & K.contains(x_cur)
    grad = gradients_at(cur.image, x_cur)
    ok &= np.isfinite(grad).all(axis=1)
    idx = np.flatnonzero(ok)
    return MatchedPairs(kps.pixels[idx], x_cur[idx], kps.depths[idx], grad[idx])


@dataclass
class KeyframeResult:
    pairs: MatchedPairs
    culled: MatchedPairs
    samples: ScaleSamples
    estimate: ScaleEstimate


def estimate_keyframe_scale(pairs: MatchedPairs, K: CameraIntrinsics, rel: Pose, cfg: RunConfig,
                            frame_index: int = 0) -> KeyframeResult:
    """Cull, triangulate with the VO relative pose ``rel`` and run RANSAC."""
    culled = cull_matches(pairs, K, rel, cfg.culling)
    samples = compute_scale_samples(culled, K, rel, cfg.min_parallax_deg)
    ransac = replace(cfg.ransac, seed=subseed(cfg.seed, cfg.ransac.seed, 5, frame_index))
    return KeyframeResult(pairs, culled, samples, ransac_scale(samples, ransac))


# Report ----------------------------------------------------------------------


@dataclass
class CorrectionEvent:
    """One successful keyframe scale estimate.

    ``correction`` is the cumulative factor on VO translations after the
    event; ``expected_scale`` is the true ratio when ground truth is known.
    """

    frame_index: int
    timestamp: float
    scale: float
    sample_count: int
    inlier_count: int
    triggered: bool
    correction: float
    expected_scale: float | None = None


@dataclass
class FrameFailure:
    frame_index: int
    timestamp: float
    stage: str
    reason: str


EVENT_COLUMNS = ("frame_index", "timestamp", "scale", "sample_count", "inlier_count", "triggered",
                 "correction", "expected_scale")


@dataclass
class RunReport:
    timestamps: np.ndarray
    vo_input: list
    vo_corrected: list
    lidar: list
    gt: list | None
    events: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    keyframe_count: int = 0
    fallback_count: int = 0
    registration_failures: int = 0
    correction: float = 1.0
    evaluation: dict = field(default_factory=dict)
    final_position_error: dict = field(default_factory=dict)
    config: RunConfig | None = None

    def trajectory(self, name: str) -> Trajectory:
        """``vo_input``, ``vo_corrected``, ``lidar`` or ``gt`` as a Trajectory."""
        poses = getattr(self, name)
        if not poses:
            raise DomainError(f"no {name} poses in this report")
        return Trajectory(self.timestamps, poses)

    def summary(self) -> dict:
        return {
            "frame_count": len(self.timestamps),
            "keyframe_count": self.keyframe_count,
            "event_count": len(self.events),
            "triggered_count": sum(e.triggered for e in self.events),
            "fallback_count": self.fallback_count,
            "registration_failures": self.registration_failures,
            "correction": self.correction,
            "final_position_error": self.final_position_error,
            "evaluation": {k: (v.to_dict() if isinstance(v, EvalReport) else v) for k, v in self.evaluation.items()},
            "events": [e.__dict__ for e in self.events],
            "failures": [f.__dict__ for f in self.failures],
            "config": config_dict(self.config) if self.config is not None else None,
        }


def _evaluate(report: RunReport, align: str) -> None:
    gt = report.trajectory("gt")
    for name in ("vo_input", "vo_corrected", "lidar"):
        if not getattr(report, name):
            continue
        est = report.trajectory(name)
        try:
            report.evaluation[name] = full_report(gt, est, align)
        except EstimationError as exc:
            report.evaluation[name] = {"error": f"{type(exc).__name__}: {exc}"}
        # anchored at the first pose, no further alignment
        anchor = report.gt[0] @ est.poses[0].inverse()
        end = (anchor @ est.poses[-1]).translation
        report.final_position_error[name] = float(np.linalg.norm(end - report.gt[-1].translation))


# Main loop -------------------------------------------------------------------


def run_pipeline(cfg: RunConfig, source=None) -> RunReport:
    """Run the full loop over every frame of ``source`` (built from ``cfg`` if omitted)."""
    cfg = validate(cfg)
    source = open_source(cfg) if source is None else source
    n = len(source)
    if n == 0:
        raise DomainError("no frames to process")
    if n < 2:
        raise DomainError("need at least two frames")
    K, X = source.K, source.T_L_C
    X_inv = X.inverse()
    stride = cfg.keyframe_stride
    stamps = np.array([source.timestamp(i) for i in range(n)], dtype=float)
    if np.any(np.diff(stamps) <= 0):
        raise DataError("frame timestamps are not strictly increasing")
    vo_in = [source.vo_pose(i) for i in range(n)]
    if any(p is None for p in vo_in):
        raise DataError("every frame needs a VO pose")
    gt = [source.gt_pose(i) for i in range(n)]
    gt = gt if all(p is not None for p in gt) else None

    corrected: list[Pose] = []
    lidar_cam: list[Pose] = []
    events: list[CorrectionEvent] = []
    failures: list[FrameFailure] = []
    c = 1.0
    keyframes = 0
    reg_failures = 0
    state = OdomState()
    kf: FrameBundle | None = None
    kf_pyr = None
    need_every_frame = cfg.lidar_odometry
    uses_lk = cfg.tracking.source == "lk" or (cfg.tracking.source == "auto" and source.scene is None)

    for i in range(n):
        if i == 0:
            corrected.append(vo_in[0])
        else:
            step = vo_in[i - 1].inverse() @ vo_in[i]
            corrected.append(corrected[-1] @ step.scaled(c))
        is_kf = i % stride == 0
        frame = source.frame(i) if (is_kf or need_every_frame) else None
        if is_kf:
            keyframes += 1
            pyr = build_pyramid(frame.image, cfg.tracker.levels) if uses_lk else None
            if kf is not None:
                p = kf.index
                rel = corrected[i].inverse() @ corrected[p]
                try:
                    kps = keyframe_keypoints(kf, K, X, cfg)
                    pairs = track_keypoints(source, cfg, kf, frame, kps, (kf_pyr, pyr) if pyr else None)
                    res = estimate_keyframe_scale(pairs, K, rel, cfg, i)
                except EstimationError as exc:
                    failures.append(FrameFailure(i, float(stamps[i]), "scale", f"{type(exc).__name__}: {exc}"))
                else:
                    s = res.estimate.scale
                    expected = None
                    if gt is not None:
                        true_step = np.linalg.norm((gt[p].inverse() @ gt[i]).translation)
                        vo_step = np.linalg.norm(rel.translation)
                        expected = float(true_step / vo_step) if vo_step > 0 else None
                    triggered = should_correct(res.estimate, cfg.trigger_threshold)
                    if triggered:
                        c *= s
                        world_pts = corrected[p].apply(res.samples.points)
                        local = apply_scale_correction(LocalMap(tuple(corrected[p:i + 1]), world_pts), s)
                        corrected[p:i + 1] = local.keyframe_poses
                    events.append(CorrectionEvent(i, float(stamps[i]), float(s), res.estimate.sample_count,
                                                  res.estimate.inlier_count, bool(triggered), float(c), expected))
            kf, kf_pyr = frame, pyr
        if cfg.lidar_odometry:
            if i == 0:
                state = OdomState(last_pose=corrected[0] @ X)
                pose, state = lidar_odometry_step(state, frame.cloud, None, cfg.odom_mode, cfg.lidar)
            else:
                vo_rel = X_inv @ (corrected[i - 1].inverse() @ corrected[i]) @ X
                try:
                    pose, state = lidar_odometry_step(state, frame.cloud, vo_rel, cfg.odom_mode, cfg.lidar)
                except RegistrationError as exc:
                    # keep going on the initial guess
                    reg_failures += 1
                    failures.append(FrameFailure(i, float(stamps[i]), "lidar", f"{type(exc).__name__}: {exc}"))
                    init = vo_rel if cfg.odom_mode == "bootstrap" else state.last_relative
                    pose = state.last_pose @ init
                    state = OdomState(pose, init, state.frame_index + 1, prepare_target(frame.cloud.points, cfg.lidar),
                                      state.fallbacks)
            lidar_cam.append(pose @ X_inv)

    report = RunReport(
        timestamps=stamps, vo_input=vo_in, vo_corrected=corrected, lidar=lidar_cam, gt=gt,
        events=events, failures=failures, keyframe_count=keyframes, fallback_count=state.fallbacks,
        registration_failures=reg_failures, correction=float(c), config=cfg,
    )
    if gt is not None:
        _evaluate(report, cfg.align)
    return report


def _csv_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    return repr(v) if isinstance(v, float) else str(v)


def emit_report(report: RunReport, out_dir) -> dict[str, Path]:
    """Write trajectories, per-event CSV and the JSON summary into ``out_dir``.

    Besides the corrected VO and LiDAR trajectories (camera poses), the
    input VO and, when known, the ground truth are written for reference.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "vo": out / "trajectory_vo.txt",
        "lidar": out / "trajectory_lidar.txt",
        "events": out / "events.csv",
        "report": out / "report.json",
        "vo_input": out / "trajectory_vo_input.txt",
    }
    write_trajectory(paths["vo"], report.trajectory("vo_corrected"))
    write_trajectory(paths["vo_input"], report.trajectory("vo_input"))
    if report.gt is not None:
        paths["gt"] = out / "trajectory_gt.txt"
        write_trajectory(paths["gt"], report.trajectory("gt"))
    if report.lidar:
        write_trajectory(paths["lidar"], report.trajectory("lidar"))
    else:
        paths["lidar"].write_text("")
    with paths["events"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for e in report.events:
            w.writerow([_csv_value(getattr(e, k)) for k in EVENT_COLUMNS])
    paths["report"].write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    return paths
