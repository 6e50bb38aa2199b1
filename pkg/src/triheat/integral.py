"""Differentiable coordinate extraction and voxel-to-metric scaling.

Soft-argmax treats a heatmap/volume as logits: coordinates are the
probability-weighted mean voxel index under a (max-stabilized) softmax.
Voxel outputs are converted to millimeters with a single global scale from
average bone lengths accumulated during training; no ground-truth depth is
consulted at decode time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, InvalidInputError, InvalidJointError, ScalingUndefinedError
from .skeleton import Pose3D, Skeleton, canonical_skeleton

COORD_FRAMES = ("voxel_index", "normalized_unit")


@dataclass(frozen=True)
class SoftArgmaxConfig:
    """``temperature`` multiplies logits before exponentiation; the
    coordinate frame is 0-based voxel indices or per-axis [0, 1] with each
    axis divided by (size - 1)."""

    temperature: float = 1.0
    coordinate_frame: str = "voxel_index"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.coordinate_frame not in COORD_FRAMES:
            raise ConfigError(f"coordinate_frame must be one of {COORD_FRAMES}")


_DEFAULT_CONFIG = SoftArgmaxConfig()


def softmax_probs(values: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Total softmax over all elements, stabilized by max subtraction."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DimensionError("softmax input must have at least one element")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("softmax input must be finite")
    z = temperature * values
    e = np.exp(z - z.max())
    return e / e.sum()


def _expected_coords(probs: np.ndarray) -> np.ndarray:
    """Expected index per axis, returned fastest-varying axis first."""
    out = []
    for axis in range(probs.ndim - 1, -1, -1):
        marginal = probs.sum(axis=tuple(a for a in range(probs.ndim) if a != axis))
        out.append(float(np.dot(np.arange(probs.shape[axis]), marginal)))
    return np.array(out)


def soft_argmax_3d(volume: np.ndarray, config: SoftArgmaxConfig = _DEFAULT_CONFIG) -> np.ndarray:
    """(x, y, z) expectation over a (D, H, W) volume; x indexes W, z indexes D."""
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3:
        raise DimensionError(f"expected a (D, H, W) volume, got shape {volume.shape}")
    coords = _expected_coords(softmax_probs(volume, config.temperature))
    if config.coordinate_frame == "normalized_unit":
        d, h, w = volume.shape
        coords = coords / np.maximum(np.array([w, h, d]) - 1.0, 1.0)
    return coords


def soft_argmax_2d(grid: np.ndarray, config: SoftArgmaxConfig = _DEFAULT_CONFIG) -> np.ndarray:
    """(x, y) expectation over an (H, W) grid."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise DimensionError(f"expected an (H, W) grid, got shape {grid.shape}")
    coords = _expected_coords(softmax_probs(grid, config.temperature))
    if config.coordinate_frame == "normalized_unit":
        h, w = grid.shape
        coords = coords / np.maximum(np.array([w, h]) - 1.0, 1.0)
    return coords


@dataclass(frozen=True)
class BoneLengthModel:
    """Per-part running mean of ground-truth bone lengths (millimeters)."""

    mean_length: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean_length, dtype=np.float64)
        count = np.asarray(self.count, dtype=np.int64)
        if mean.ndim != 1 or count.shape != mean.shape:
            raise DimensionError("mean_length and count must be matching 1-D arrays")
        if np.any(mean < 0):
            raise ConfigError("mean lengths must be >= 0")
        object.__setattr__(self, "mean_length", mean)
        object.__setattr__(self, "count", count)

    @classmethod
    def empty(cls, num_parts: int) -> "BoneLengthModel":
        return cls(np.zeros(num_parts), np.zeros(num_parts, dtype=np.int64))

    def to_json_dict(self) -> dict:
        return {
            "schema": "triheat.bone_lengths/1",
            "mean_length_mm": [float(v) for v in self.mean_length],
            "count": [int(v) for v in self.count],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "BoneLengthModel":
        if doc.get("schema") != "triheat.bone_lengths/1":
            raise ConfigError(f"unexpected bone-length schema {doc.get('schema')!r}")
        return cls(np.asarray(doc["mean_length_mm"]), np.asarray(doc["count"]))


def update_bone_lengths(
    model: BoneLengthModel, pose_gt_mm: Pose3D, skeleton: Skeleton = None
) -> BoneLengthModel:
    """Fold one ground-truth pose into the running means.

    Parts with an invalid endpoint leave their mean and count unchanged.
    """
    skeleton = skeleton or canonical_skeleton()
    if model.mean_length.shape[0] != skeleton.num_parts:
        raise DimensionError("model size does not match skeleton part count")
    mean = model.mean_length.copy()
    count = model.count.copy()
    for k, (p, c) in enumerate(skeleton.parts):
        if pose_gt_mm.valid[p] and pose_gt_mm.valid[c]:
            length = float(np.linalg.norm(pose_gt_mm.coords[c] - pose_gt_mm.coords[p]))
            count[k] += 1
            mean[k] += (length - mean[k]) / count[k]
    return BoneLengthModel(mean, count)


def voxel_to_metric(
    pose_voxel: Pose3D, model: BoneLengthModel, skeleton: Skeleton = None
) -> Pose3D:
    """Scale a decoded voxel pose to root-relative millimeters.

    The scale is the ratio of summed learned bone lengths to summed decoded
    voxel bone lengths over parts that are valid in the pose, have positive
    voxel length and a positive learned mean.  The root must be valid; the
    output root sits at the origin.
    """
    skeleton = skeleton or canonical_skeleton()
    if model.mean_length.shape[0] != skeleton.num_parts:
        raise DimensionError("model size does not match skeleton part count")
    if not pose_voxel.valid[skeleton.root_index]:
        raise InvalidJointError("root joint must be valid for metric scaling")
    total_mm = 0.0
    total_vox = 0.0
    for k, (p, c) in enumerate(skeleton.parts):
        if not (pose_voxel.valid[p] and pose_voxel.valid[c]):
            continue
        vox_len = float(np.linalg.norm(pose_voxel.coords[c] - pose_voxel.coords[p]))
        if vox_len > 0.0 and model.mean_length[k] > 0.0:
            total_vox += vox_len
            total_mm += float(model.mean_length[k])
    if total_vox == 0.0:
        raise ScalingUndefinedError(
            "no part with positive voxel length and learned mean; scale undefined"
        )
    scale = total_mm / total_vox
    root = pose_voxel.coords[skeleton.root_index]
    coords = (pose_voxel.coords - root) * scale
    return Pose3D(coords=coords, valid=pose_voxel.valid.copy(), voxel_space=False)
