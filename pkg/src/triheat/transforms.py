"""Crop/resize mapping and pose-space augmentation.

The crop transform expands a source box to a square (side = the larger box
dimension, same center) and maps it to an ``out_size`` x ``out_size`` frame.
Augmentation applies an in-plane rotation, an isotropic scale and an
optional horizontal mirror consistently to 2D and 3D joints: rotation and
mirror leave z untouched (so relative-depth states survive), while the
isotropic scale multiplies all three axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GeometryError
from .skeleton import Pose2D, Pose3D, Skeleton, canonical_skeleton

CROP_OUT_SIZE = 256

ROTATION_RANGE_DEG = 30.0
SCALE_RANGE = (0.75, 1.25)
FLIP_PROBABILITY = 0.5


@dataclass(frozen=True)
class CropTransform:
    """Affine mapping from source-image pixels to the square output frame."""

    source_box: tuple          # (x, y, width, height)
    square_box: tuple          # (x, y, side, side)
    out_size: int
    scale: float               # out pixels per source pixel

    def forward(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        ox, oy = self.square_box[0], self.square_box[1]
        return (pts - np.array([ox, oy])) * self.scale

    def inverse(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        ox, oy = self.square_box[0], self.square_box[1]
        return pts / self.scale + np.array([ox, oy])


def crop_and_resize(box, image_dims=None, out_size: int = CROP_OUT_SIZE) -> CropTransform:
    """Square crop transform for a (x, y, width, height) box.

    The square keeps the box center and uses side = max(width, height); the
    output frame is ``out_size`` square.  ``image_dims`` (width, height) is
    accepted for provenance; the square may extend beyond the image (the
    caller pads).  A box without positive area raises GeometryError.
    """
    x, y, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise GeometryError(f"box must have positive area, got {w} x {h}")
    side = max(w, h)
    cx, cy = x + w / 2.0, y + h / 2.0
    sq = (cx - side / 2.0, cy - side / 2.0, side, side)
    return CropTransform(
        source_box=(x, y, w, h),
        square_box=sq,
        out_size=int(out_size),
        scale=out_size / side,
    )


@dataclass(frozen=True)
class AugmentConfig:
    """Ranges for the augmentation draw; defaults follow common practice
    (rotation +-30 degrees, scale 0.75-1.25, mirror with probability 0.5)."""

    max_rotation_deg: float = ROTATION_RANGE_DEG
    scale_range: tuple = SCALE_RANGE
    flip_probability: float = FLIP_PROBABILITY
    center2d: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.max_rotation_deg < 0:
            raise ConfigError("max_rotation_deg must be >= 0")
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ConfigError("scale_range must satisfy 0 < lo <= hi")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ConfigError("flip_probability must lie in [0, 1]")


IDENTITY_AUGMENT = AugmentConfig(max_rotation_deg=0.0, scale_range=(1.0, 1.0), flip_probability=0.0)


@dataclass(frozen=True)
class AugmentDraw:
    """The sampled transform parameters actually applied to one sample."""

    angle_deg: float
    scale: float
    flipped: bool


def _rot2d(angle_deg: float) -> np.ndarray:
    a = np.radians(angle_deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s], [s, c]])


def apply_augment(
    pose2d: Pose2D,
    pose3d: Pose3D,
    draw: AugmentDraw,
    config: AugmentConfig = IDENTITY_AUGMENT,
    skeleton: Skeleton = None,
) -> tuple[Pose2D, Pose3D]:
    """Apply fixed augmentation parameters to a 2D/3D pose pair.

    2D coordinates rotate and scale about ``config.center2d`` and mirror in
    x about the same center; 3D coordinates get the matching in-plane
    rotation on (x, y), isotropic scale on all axes and x mirrored about 0.
    A mirror also swaps left/right joint channels in both poses.
    """
    skeleton = skeleton or canonical_skeleton()
    center = np.asarray(config.center2d, dtype=np.float64)
    rot = _rot2d(draw.angle_deg)

    c2 = (pose2d.coords - center) @ rot.T * draw.scale + center
    c3 = pose3d.coords.copy()
    c3[:, :2] = c3[:, :2] @ rot.T
    c3 *= draw.scale
    v2 = pose2d.valid.copy()
    v3 = pose3d.valid.copy()

    if draw.flipped:
        c2[:, 0] = 2.0 * center[0] - c2[:, 0]
        c3[:, 0] = -c3[:, 0]
        perm = np.asarray(skeleton.mirror_map(), dtype=np.intp)
        c2, v2 = c2[perm], v2[perm]
        c3, v3 = c3[perm], v3[perm]

    return (
        Pose2D(coords=c2, valid=v2),
        Pose3D(coords=c3, valid=v3, voxel_space=pose3d.voxel_space),
    )


def augment(
    pose2d: Pose2D,
    pose3d: Pose3D,
    seed: int,
    config: AugmentConfig = AugmentConfig(),
    skeleton: Skeleton = None,
) -> tuple[Pose2D, Pose3D, AugmentDraw]:
    """Draw rotation/scale/mirror from ``seed`` and apply them.

    Deterministic for a fixed (seed, config); returns the transformed pair
    plus the draw so callers can reproduce or invert it.
    """
    rng = np.random.default_rng(seed)
    draw = AugmentDraw(
        angle_deg=float(rng.uniform(-config.max_rotation_deg, config.max_rotation_deg)),
        scale=float(rng.uniform(config.scale_range[0], config.scale_range[1])),
        flipped=bool(rng.random() < config.flip_probability),
    )
    out2d, out3d = apply_augment(pose2d, pose3d, draw, config, skeleton)
    return out2d, out3d, draw
