"""Small shared builders for the tests."""

import numpy as np

from vloscale.geometry import Pose


def random_pose(rng, max_angle=np.pi, max_t=5.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose.from_rotvec(axis * rng.uniform(0, max_angle), rng.uniform(-max_t, max_t, 3))


def rot_z(deg: float) -> np.ndarray:
    a = np.radians(deg)
    return np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])


def straight_poses(n: int, step: float = 1.0, dt: float = 0.1):
    """``(timestamp, Pose)`` pairs moving along +x with identity rotation."""
    return [(k * dt, Pose(np.eye(3), (k * step, 0.0, 0.0))) for k in range(n)]
