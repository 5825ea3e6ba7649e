"""LiDAR-anchored monocular scale correction and visually bootstrapped LiDAR odometry."""

from .config import RunConfig, load_config, parse_config
from .errors import (
    ConfigurationError,
    DataError,
    DomainError,
    EstimationError,
    VloError,
)
from .evaluation import EvalReport, evaluate_ate_are, full_report, kitti_segment_errors
from .frames import FrameBundle
from .geometry import CameraIntrinsics, KeypointSet, PointCloud, Pose, project_cloud, triangulate_pairs, umeyama_align
from .image import ImageGray, SelectionConfig, TrackerConfig, lk_track, read_image, select_keypoints
from .kitti import load_kitti_frame
from .lidar_odom import IcpConfig, LidarOdomConfig, estimate_normals, lidar_odometry_step, point_to_plane_icp
from .pipeline import RunReport, emit_report, run_pipeline
from .scale import RansacConfig, ScaleEstimate, apply_scale_correction, compute_scale_samples, cull_matches, ransac_scale, should_correct
from .trajectory import Trajectory, read_trajectory, write_trajectory

__version__ = "0.1.0"
