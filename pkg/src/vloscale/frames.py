"""The synchronized camera/LiDAR frame handed to the pipeline."""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import PointCloud, Pose
from .image import ImageGray


@dataclass(frozen=True, eq=False)
class FrameBundle:
    """One synchronized frame: image, LiDAR scan and the poses known for it.

    ``vo_pose`` is the (drifting) monocular VO camera-to-world pose and
    ``gt_pose`` the ground truth, either of which may be unknown.
    """

    index: int
    timestamp: float
    image: ImageGray
    cloud: PointCloud
    vo_pose: Pose | None = None
    gt_pose: Pose | None = None
