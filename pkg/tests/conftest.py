import numpy as np
import pytest

from triheat.skeleton import Pose2D, Pose3D, canonical_skeleton, reference_pose


@pytest.fixture
def skeleton():
    return canonical_skeleton()


def random_pose_mm(rng, jitter=80.0):
    """Reference pose with per-joint jitter; root stays at the origin."""
    coords = reference_pose().coords.copy()
    coords += rng.normal(scale=jitter, size=coords.shape)
    return Pose3D(coords=coords - coords[0])


def random_pose_grid(rng, grid=(64, 64), margin=6.0, depth_scale=200.0):
    """A pose whose 2D joints all land inside the heatmap grid.

    Returns (pose3d, pose2d): the 3D pose carries the same x, y as the 2D
    pixels plus an independent depth channel (millimeter scale).
    """
    h, w = grid
    n = canonical_skeleton().num_joints
    xy = np.column_stack(
        [rng.uniform(margin, w - 1 - margin, n), rng.uniform(margin, h - 1 - margin, n)]
    )
    z = rng.normal(scale=depth_scale, size=n)
    pose3d = Pose3D(coords=np.column_stack([xy * 10.0, z]))
    pose2d = Pose2D(coords=xy)
    return pose3d, pose2d
