"""Timestamped pose sequences, their text format and interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import DataError, DomainError, OutOfRangeError
from .geometry import Pose

ASSOCIATION_TOLERANCE = 0.005


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Poses (camera or sensor to world) at strictly increasing timestamps."""

    timestamps: np.ndarray
    poses: tuple

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=float).reshape(-1)
        poses = tuple(self.poses)
        if t.shape[0] != len(poses):
            raise DomainError("timestamp and pose counts differ")
        if not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
            raise DomainError("timestamps must be finite and strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "poses", poses)

    @classmethod
    def from_samples(cls, samples) -> "Trajectory":
        samples = list(samples)
        return cls([s[0] for s in samples], [s[1] for s in samples])

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i) -> tuple[float, Pose]:
        return float(self.timestamps[i]), self.poses[i]

    def __iter__(self) -> Iterator[tuple[float, Pose]]:
        for i in range(len(self)):
            yield self[i]

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]).reshape(-1, 3)

    def rotations(self) -> np.ndarray:
        return np.array([p.rotation for p in self.poses]).reshape(-1, 3, 3)

    def transformed(self, pose: Pose, scale: float = 1.0) -> "Trajectory":
        """Apply ``x -> scale * R x + t`` to the whole trajectory."""
        out = [Pose(pose.rotation @ p.rotation, scale * pose.rotation @ p.translation + pose.translation) for p in self.poses]
        return Trajectory(self.timestamps, out)


def write_trajectory(path, traj: Trajectory) -> None:
    """One pose per line: ``timestamp tx ty tz qx qy qz qw``."""
    lines = []
    for t, pose in traj:
        vals = [t, *pose.translation, *pose.quaternion()]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read trajectory {path}: {exc}") from exc
    stamps, poses = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            vals = [float(x) for x in parts]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-numeric field") from exc
        if len(vals) != 8:
            raise DataError(f"{path}:{lineno}: expected 8 fields, got {len(vals)}")
        q = np.array(vals[4:])
        norm = np.linalg.norm(q)
        if not norm > 0:
            raise DataError(f"{path}:{lineno}: zero quaternion")
        stamps.append(vals[0])
        poses.append(Pose.from_quaternion(q / norm, vals[1:4]))
    try:
        return Trajectory(stamps, poses)
    except DomainError as exc:
        raise DataError(f"{path}: {exc}") from exc


def interpolate_trajectory(traj: Trajectory, timestamps) -> Trajectory:
    """Poses at ``timestamps``: linear in translation, slerp in rotation.

    Queries equal to a stored timestamp return the stored pose unchanged.
    """
    q = np.asarray(timestamps, dtype=float).reshape(-1)
    t = traj.timestamps
    if q.size and (q.min() < t[0] or q.max() > t[-1]):
        raise OutOfRangeError(f"query outside [{t[0]}, {t[-1]}]")
    if len(traj) == 1:
        return Trajectory(q, [traj.poses[0]] * q.size)
    slerp = Slerp(t, Rotation.from_matrix(traj.rotations()))
    pos = traj.positions()
    out = []
    for s in q:
        i = int(np.searchsorted(t, s))
        if i < len(t) and t[i] == s:
            out.append(traj.poses[i])
            continue
        a, b = i - 1, i
        w = (s - t[a]) / (t[b] - t[a])
        out.append(Pose(slerp([s]).as_matrix()[0], (1 - w) * pos[a] + w * pos[b]))
    return Trajectory(q, out)


def associate(reference: Trajectory, other: Trajectory, tolerance: float = ASSOCIATION_TOLERANCE):
    """Pair each pose of ``other`` with a reference pose at the same time.

    A reference sample within ``tolerance`` seconds is used directly;
    otherwise the reference is interpolated.  Samples of ``other`` outside
    the reference time span are dropped.  Returns ``(timestamps, ref_poses,
    other_poses)``.
    """
    rt = reference.timestamps
    stamps, ref, oth = [], [], []
    for s, pose in other:
        if s < rt[0] - tolerance or s > rt[-1] + tolerance:
            continue
        i = int(np.argmin(np.abs(rt - s)))
        if abs(rt[i] - s) <= tolerance:
            ref.append(reference.poses[i])
        else:
            ref.append(interpolate_trajectory(reference, [s]).poses[0])
        stamps.append(s)
        oth.append(pose)
    return np.array(stamps), ref, oth
