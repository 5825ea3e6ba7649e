"""Trajectory accuracy metrics: ATE/ARE after alignment and KITTI-style segment errors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentDegenerateError, DomainError, InsufficientDataError, NoValidSegmentsError
from .geometry import rotation_angle_between, umeyama_align, umeyama_core
from .trajectory import Trajectory, associate

ALIGNMENTS = ("none", "rigid", "similarity")
SEGMENT_LENGTHS = tuple(range(100, 801, 100))


@dataclass
class EvalReport:
    ate_rmse: float
    are_deg: float | None = None
    kitti_trans_pct: float | None = None
    kitti_rot_deg_per_m: float | None = None
    alignment: dict = field(default_factory=dict)
    pose_count: int = 0

    def to_dict(self) -> dict:
        return {
            "ate_rmse": self.ate_rmse,
            "are_deg": self.are_deg,
            "kitti_trans_pct": self.kitti_trans_pct,
            "kitti_rot_deg_per_m": self.kitti_rot_deg_per_m,
            "alignment": self.alignment,
            "pose_count": self.pose_count,
        }


def evaluate_ate_are(gt: Trajectory, est: Trajectory, align: str = "none") -> EvalReport:
    """Translation RMSE and geodesic rotation RMSE (degrees) of ``est`` against ``gt``.

    With ``rigid`` or ``similarity`` alignment the estimate is first mapped
    onto the ground truth by the least-squares transform of its positions.
    """
    if align not in ALIGNMENTS:
        raise DomainError(f"alignment must be one of {ALIGNMENTS}")
    _, ref, oth = associate(gt, est)
    if len(ref) < 3:
        raise InsufficientDataError(f"{len(ref)} associated poses, need 3")
    p_ref = np.array([p.translation for p in ref])
    p_est = np.array([p.translation for p in oth])
    s, rot, t = 1.0, np.eye(3), np.zeros(3)
    if align != "none":
        try:
            s, rot, t = umeyama_align(p_ref, p_est, with_scale=align == "similarity")
        except AlignmentDegenerateError:
            # straight-line paths: still a valid least-squares alignment
            s, rot, t = umeyama_core(p_ref, p_est, with_scale=align == "similarity")
    aligned = s * p_est @ rot.T + t
    ate = float(np.sqrt(np.mean(np.sum((aligned - p_ref) ** 2, axis=1))))
    angles = np.array([rotation_angle_between(a.rotation, rot @ b.rotation) for a, b in zip(ref, oth)])
    are = float(np.degrees(np.sqrt(np.mean(angles**2))))
    alignment = {"type": align, "scale": float(s), "rotation": rot.tolist(), "translation": t.tolist()}
    return EvalReport(ate, are, alignment=alignment, pose_count=len(ref))


def _path_distances(poses) -> np.ndarray:
    p = np.array([x.translation for x in poses])
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p, axis=0), axis=1))])


def kitti_segment_rows(gt: Trajectory, est: Trajectory, lengths=SEGMENT_LENGTHS) -> list[tuple]:
    """Per-segment errors ``(start_index, length, trans_pct, rot_deg_per_m)``.

    Every associated sample is a segment start; a segment ends at the first
    sample whose distance along the ground-truth path reaches the length.
    """
    _, ref, oth = associate(gt, est)
    if not ref:
        return []
    dist = _path_distances(ref)
    rows = []
    for i in range(len(ref)):
        for length in lengths:
            j = int(np.searchsorted(dist, dist[i] + length))
            if j >= len(ref):
                continue
            d_gt = ref[i].inverse() @ ref[j]
            d_est = oth[i].inverse() @ oth[j]
            err = d_gt.inverse() @ d_est
            rows.append((i, length, 100.0 * float(np.linalg.norm(err.translation)) / length,
                         float(np.degrees(err.angle())) / length))
    return rows


def kitti_segment_errors(gt: Trajectory, est: Trajectory) -> tuple[float, float]:
    """Mean translation error (% of length) and rotation error (deg/m) over all segments."""
    rows = kitti_segment_rows(gt, est)
    if not rows:
        raise NoValidSegmentsError("ground-truth path too short for a 100 m segment")
    arr = np.array([(r[2], r[3]) for r in rows])
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def full_report(gt: Trajectory, est: Trajectory, align: str = "similarity") -> EvalReport:
    """ATE/ARE plus segment errors when the path is long enough."""
    rep = evaluate_ate_are(gt, est, align)
    try:
        rep.kitti_trans_pct, rep.kitti_rot_deg_per_m = kitti_segment_errors(gt, est)
    except NoValidSegmentsError:
        pass
    return rep

