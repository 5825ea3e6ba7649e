"""Reading and writing sequences in the KITTI odometry layout.

A sequence directory holds ``velodyne/NNNNNN.bin`` (little-endian float32
``x y z reflectance`` records), grayscale ``image_0/NNNNNN.pgm`` (or
``.png``), ``calib.txt`` with ``P0:`` and ``Tr:`` rows, ``times.txt`` and
optionally ``poses.txt`` (ground truth, 12 values per line).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CalibParseError, DataError, MalformedCloudError
from .frames import FrameBundle
from .geometry import CameraIntrinsics, PointCloud, Pose
from .image import ImageGray, read_image, write_pgm

CLOUD_DTYPE = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class KittiCalib:
    """Parsed ``calib.txt``: raw rows plus the derived camera model."""

    rows: dict
    K: CameraIntrinsics
    T_L_C: Pose


def _frame_name(index: int) -> str:
    if index < 0:
        raise DataError(f"negative frame index {index}")
    return f"{index:06d}"


def read_velodyne_bin(path) -> PointCloud:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) % 16:
        raise MalformedCloudError(f"{path}: {len(raw)} bytes is not a multiple of 16")
    rec = np.frombuffer(raw, dtype=CLOUD_DTYPE).reshape(-1, 4)
    return PointCloud(rec[:, :3].astype(np.float64))


def write_velodyne_bin(path, points: np.ndarray, reflectance=None) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    rec = np.zeros((pts.shape[0], 4), dtype=CLOUD_DTYPE)
    rec[:, :3] = pts
    if reflectance is not None:
        rec[:, 3] = reflectance
    Path(path).write_bytes(rec.tobytes())


def parse_calib_rows(text: str, source: str = "calib.txt") -> dict:
    rows = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        label, sep, rest = line.partition(":")
        if not sep:
            raise CalibParseError(f"{source}:{lineno}: missing ':' after the row label")
        try:
            vals = [float(x) for x in rest.split()]
        except ValueError as exc:
            raise CalibParseError(f"{source}:{lineno}: non-numeric value") from exc
        if len(vals) != 12:
            raise CalibParseError(f"{source}:{lineno}: expected 12 values, got {len(vals)}")
        rows[label.strip()] = vals
    return rows


def _rigid_from_row(vals, source: str) -> Pose:
    m = np.asarray(vals, dtype=float).reshape(3, 4)
    r = m[:, :3]
    err = np.abs(r.T @ r - np.eye(3)).max()
    if err > 1e-3 or np.linalg.det(r) <= 0:
        raise CalibParseError(f"{source}: Tr rotation is not a rotation")
    if err > 1e-6:
        # printed calibration files carry a few digits only
        u, _, vt = np.linalg.svd(r)
        r = u @ vt
    return Pose(r, m[:, 3])


def read_calib(sequence_dir, image_size: tuple[int, int]) -> KittiCalib:
    """Parse ``calib.txt``; ``image_size`` is ``(width, height)`` of camera 0."""
    path = Path(sequence_dir) / "calib.txt"
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = parse_calib_rows(text, str(path))
    for label in ("P0", "Tr"):
        if label not in rows:
            raise CalibParseError(f"{path}: missing {label} row")
    p = np.asarray(rows["P0"]).reshape(3, 4)
    try:
        K = CameraIntrinsics(p[0, 0], p[1, 1], p[0, 2], p[1, 2], int(image_size[0]), int(image_size[1]))
    except ValueError as exc:
        raise CalibParseError(f"{path}: P0 is not a valid camera: {exc}") from exc
    return KittiCalib(rows, K, _rigid_from_row(rows["Tr"], str(path)))


def read_times(sequence_dir) -> np.ndarray:
    path = Path(sequence_dir) / "times.txt"
    try:
        return np.array([float(x) for x in path.read_text().split()])
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric timestamp") from exc


def read_kitti_poses(path) -> list[Pose]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    poses = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            vals = [float(x) for x in line.split()]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: non-numeric value") from exc
        if len(vals) != 12:
            raise DataError(f"{path}:{lineno}: expected 12 values")
        poses.append(_rigid_from_row(vals, f"{path}:{lineno}"))
    return poses


def image_path(sequence_dir, index: int) -> Path:
    base = Path(sequence_dir) / "image_0"
    for ext in (".pgm", ".png"):
        p = base / (_frame_name(index) + ext)
        if p.exists():
            return p
    raise DataError(f"no image for frame {index} in {base}")


def frame_count(sequence_dir) -> int:
    return len(read_times(sequence_dir))


def load_kitti_frame(sequence_dir, index: int, times: np.ndarray | None = None,
                     gt_poses: list | None = None) -> FrameBundle:
    """Read frame ``index``; ``times`` and ``gt_poses`` may be passed to avoid re-reading."""
    seq = Path(sequence_dir)
    times = read_times(seq) if times is None else times
    if not 0 <= index < len(times):
        raise DataError(f"frame {index} outside times.txt ({len(times)} entries)")
    cloud = read_velodyne_bin(seq / "velodyne" / (_frame_name(index) + ".bin"))
    cloud = PointCloud(cloud.points, timestamp=float(times[index]))
    img = read_image(image_path(seq, index))
    gt = gt_poses[index] if gt_poses is not None and index < len(gt_poses) else None
    return FrameBundle(index, float(times[index]), img, cloud, None, gt)


def _row_text(label: str, vals) -> str:
    return label + ": " + " ".join(repr(float(v)) for v in vals)


def export_kitti_sequence(out_dir, frames, K: CameraIntrinsics, T_L_C: Pose) -> Path:
    """Write ``frames`` (FrameBundles) in the layout read by :func:`load_kitti_frame`.

    Ground-truth poses, when every frame has one, go to ``poses.txt``.
    """
    out = Path(out_dir)
    (out / "velodyne").mkdir(parents=True, exist_ok=True)
    (out / "image_0").mkdir(parents=True, exist_ok=True)
    frames = list(frames)
    p0 = [K.fx, 0.0, K.cx, 0.0, 0.0, K.fy, K.cy, 0.0, 0.0, 0.0, 1.0, 0.0]
    tr = np.hstack([T_L_C.rotation, T_L_C.translation[:, None]]).reshape(-1)
    calib = [_row_text(f"P{i}", p0) for i in range(4)] + [_row_text("Tr", tr)]
    (out / "calib.txt").write_text("\n".join(calib) + "\n")
    (out / "times.txt").write_text("".join(repr(float(f.timestamp)) + "\n" for f in frames))
    for i, f in enumerate(frames):
        write_velodyne_bin(out / "velodyne" / (_frame_name(i) + ".bin"), f.cloud.points)
        write_pgm(out / "image_0" / (_frame_name(i) + ".pgm"), f.image)
    if frames and all(f.gt_pose is not None for f in frames):
        lines = []
        for f in frames:
            m = np.hstack([f.gt_pose.rotation, f.gt_pose.translation[:, None]]).reshape(-1)
            lines.append(" ".join(repr(float(v)) for v in m))
        (out / "poses.txt").write_text("\n".join(lines) + "\n")
    return out


def open_sequence(sequence_dir):
    """Calibration, timestamps and optional ground truth of a sequence."""
    seq = Path(sequence_dir)
    times = read_times(seq)
    if len(times) == 0:
        raise DataError(f"{seq}: times.txt is empty")
    first = read_image(image_path(seq, 0))
    calib = read_calib(seq, (first.width, first.height))
    gt = read_kitti_poses(seq / "poses.txt") if (seq / "poses.txt").exists() else None
    return calib, times, gt
