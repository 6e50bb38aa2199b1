"""Triplet heatmap targets: rendering, encoding and decoding.

Each skeletal part gets a stack of three peak-normalized Gaussian heatmaps
(layers ordered negative / zero / positive).  The parent joint always lives
in the zero layer; the child joint lands in the layer selected by the
tri-state relative-depth function.  A binary mask of the same shape gates
which layers carry training signal.

Conventions pinned here:
- tri-state boundary |z_p - z_c| == epsilon belongs to the 0 state;
- Gaussians have amplitude 1 at the (sub-pixel) center and are rendered
  analytically without snapping or truncation;
- co-located peaks within one layer combine by element-wise maximum, so
  target values never exceed 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, UnknownPolarityError
from .skeleton import Pose2D, Pose3D, Skeleton, canonical_skeleton, part_length

DEFAULT_GRID = (64, 64)
DEFAULT_VOLUME = (64, 64, 64)
DEFAULT_SIGMA = 2.0

# Layer index within a triplet stack for each polarity value.
LAYER_OF_POLARITY = {-1: 0, 0: 1, +1: 2}

# 5-state tilt bins in degrees: [lo, hi) except the last bin, closed at +90.
FIVE_STATE_BINS = (-90.0, -60.0, -30.0, 30.0, 60.0, 90.0)


def tri_state(z_p: float, z_c: float, epsilon: float) -> int:
    """Relative depth state of a (parent, child) pair.

    +1 when the parent is deeper than the child by more than ``epsilon``
    (child closer to the camera), -1 for the opposite, 0 otherwise.
    """
    if epsilon < 0:
        raise ConfigError("epsilon must be >= 0")
    d = z_p - z_c
    if d > epsilon:
        return 1
    if d < -epsilon:
        return -1
    return 0


def adaptive_epsilon(pose: Pose3D, part_index: int, skeleton: Skeleton = None) -> float:
    """Depth sensitivity for a part: half its 3D length.

    Returns 0.0 for a degenerate (zero-length) part, which doubles as the
    degeneracy flag since the value is zero exactly when the part is.
    """
    return 0.5 * part_length(pose, part_index, skeleton or canonical_skeleton())


def render_gaussian(center, shape, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Amplitude-1 isotropic Gaussian on an (H, W) grid, sub-pixel center.

    Centers outside the grid render their clipped tail (possibly all zeros);
    use :func:`is_in_frame` to flag them.
    """
    if sigma <= 0:
        raise ConfigError("sigma must be > 0")
    h, w = int(shape[0]), int(shape[1])
    cx, cy = float(center[0]), float(center[1])
    xs = np.arange(w, dtype=np.float64) - cx
    ys = np.arange(h, dtype=np.float64) - cy
    return np.exp(-(xs[None, :] ** 2 + ys[:, None] ** 2) / (2.0 * sigma * sigma))


def is_in_frame(center, shape) -> bool:
    """True when the center lies inside the grid's index hull."""
    h, w = int(shape[0]), int(shape[1])
    cx, cy = float(center[0]), float(center[1])
    return 0.0 <= cx <= w - 1 and 0.0 <= cy <= h - 1


@dataclass(frozen=True)
class HeatmapTriplets:
    """Per-part triplet stacks plus their binary supervision mask.

    maps, mask: (K, 3, H, W) float64; mask entries are 0 or 1.
    """

    maps: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.float64)
        if maps.ndim != 4 or maps.shape[1] != 3:
            raise DimensionError(f"triplet maps must be (K, 3, H, W), got {maps.shape}")
        if mask.shape != maps.shape:
            raise DimensionError("mask shape must match maps shape")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "mask", mask)

    @property
    def num_parts(self) -> int:
        return self.maps.shape[0]

    @property
    def grid_shape(self):
        return self.maps.shape[2:]


def part_polarities(pose3d: Pose3D, skeleton: Skeleton = None) -> np.ndarray:
    """Tri-state value per part using the adaptive epsilon; 0 for invalid parts."""
    skeleton = skeleton or canonical_skeleton()
    out = np.zeros(skeleton.num_parts, dtype=np.int64)
    for k, (p, c) in enumerate(skeleton.parts):
        if pose3d.valid[p] and pose3d.valid[c]:
            eps = adaptive_epsilon(pose3d, k, skeleton)
            out[k] = tri_state(pose3d.coords[p, 2], pose3d.coords[c, 2], eps)
    return out


def encode_from_labels(
    pose2d: Pose2D,
    polarity,
    supervised,
    skeleton: Skeleton = None,
    grid=DEFAULT_GRID,
    sigma: float = DEFAULT_SIGMA,
    mask_unknown_fully: bool = False,
) -> HeatmapTriplets:
    """Build triplet targets from 2D joints plus per-part depth labels.

    ``polarity`` is a (K,) array in {-1, 0, +1}; ``supervised`` a (K,) bool
    array (False = unknown depth).  Unsupervised parts keep the parent's
    zero-layer Gaussian with the polarity layers masked, unless
    ``mask_unknown_fully`` masks all three layers.  Parts with an invalid
    endpoint are fully masked and left empty.
    """
    skeleton = skeleton or canonical_skeleton()
    h, w = int(grid[0]), int(grid[1])
    polarity = np.asarray(polarity, dtype=np.int64)
    supervised = np.asarray(supervised, dtype=bool)
    if polarity.shape != (skeleton.num_parts,) or supervised.shape != (skeleton.num_parts,):
        raise DimensionError("polarity and supervised must have one entry per part")

    maps = np.zeros((skeleton.num_parts, 3, h, w))
    mask = np.zeros_like(maps)
    for k, (p, c) in enumerate(skeleton.parts):
        if not (pose2d.valid[p] and pose2d.valid[c]):
            continue
        parent_g = render_gaussian(pose2d.coords[p], (h, w), sigma)
        maps[k, 1] = parent_g
        if supervised[k]:
            layer = LAYER_OF_POLARITY[int(polarity[k])]
            child_g = render_gaussian(pose2d.coords[c], (h, w), sigma)
            maps[k, layer] = np.maximum(maps[k, layer], child_g)
            mask[k, :] = 1.0
        elif not mask_unknown_fully:
            mask[k, 1] = 1.0
    return HeatmapTriplets(maps=maps, mask=mask)


def encode_hemlets(
    pose3d: Pose3D,
    pose2d: Pose2D,
    skeleton: Skeleton = None,
    grid=DEFAULT_GRID,
    sigma: float = DEFAULT_SIGMA,
) -> HeatmapTriplets:
    """Encode a fully 3D-annotated pose into triplet targets.

    Each part with both endpoints valid in 3D and 2D gets the parent in the
    zero layer and the child in the layer chosen by the tri-state of the
    endpoint depths with the adaptive epsilon; all three layers unmasked.
    Parts with any invalid endpoint are fully masked.
    """
    skeleton = skeleton or canonical_skeleton()
    if grid[0] <= 0 or grid[1] <= 0:
        raise ConfigError("grid dimensions must be positive")
    valid3d = np.array(
        [pose3d.valid[p] and pose3d.valid[c] for p, c in skeleton.parts], dtype=bool
    )
    polarity = part_polarities(pose3d, skeleton)
    # encode_from_labels additionally requires 2D validity per endpoint.
    triplets = encode_from_labels(
        pose2d, polarity, valid3d, skeleton, grid, sigma, mask_unknown_fully=True
    )
    return triplets


def decode_hemlets_polarity(triplets: HeatmapTriplets, part_index: int) -> int:
    """Recover a part's tri-state from its triplet stack.

    Finds the child peak among the three layers and returns the polarity of
    the layer it lives in: a dominant response in a polarity layer wins
    (the parent never appears there); otherwise the child must be co-located
    in the zero layer.  Masked or empty stacks raise
    :class:`UnknownPolarityError`.
    """
    stack = triplets.maps[part_index]
    mask = triplets.mask[part_index]
    if not (mask[0].any() and mask[2].any()):
        raise UnknownPolarityError(
            f"part {part_index} has masked polarity layers; its depth state is unknown"
        )
    peak = float(stack.max())
    if peak < 1e-9:
        raise UnknownPolarityError(f"part {part_index} triplet stack is empty")
    threshold = 0.5 * peak
    m_neg = float(stack[0].max())
    m_pos = float(stack[2].max())
    if max(m_neg, m_pos) > threshold:
        return -1 if m_neg >= m_pos else 1
    return 0


def encode_5s(
    pose3d: Pose3D,
    pose2d: Pose2D,
    skeleton: Skeleton = None,
    grid=DEFAULT_GRID,
    sigma: float = DEFAULT_SIGMA,
) -> tuple[np.ndarray, np.ndarray]:
    """Five-state variant: the child layer is picked by signed tilt angle.

    The signed tilt is arcsin((z_c - z_p) / length) in degrees; bins are
    [-90,-60), [-60,-30), [-30,30), [30,60), [60,90] indexed 0..4, and the
    parent sits in the middle layer.  Returns (maps, mask) of shape
    (K, 5, H, W).
    """
    skeleton = skeleton or canonical_skeleton()
    h, w = int(grid[0]), int(grid[1])
    maps = np.zeros((skeleton.num_parts, 5, h, w))
    mask = np.zeros_like(maps)
    for k, (p, c) in enumerate(skeleton.parts):
        if not (
            pose3d.valid[p] and pose3d.valid[c] and pose2d.valid[p] and pose2d.valid[c]
        ):
            continue
        length = part_length(pose3d, k, skeleton)
        if length == 0.0:
            signed_tilt = 0.0
        else:
            ratio = (pose3d.coords[c, 2] - pose3d.coords[p, 2]) / length
            signed_tilt = np.degrees(np.arcsin(np.clip(ratio, -1.0, 1.0)))
        layer = min(
            int(np.searchsorted(FIVE_STATE_BINS[1:-1], signed_tilt, side="right")), 4
        )
        maps[k, 2] = render_gaussian(pose2d.coords[p], (h, w), sigma)
        child_g = render_gaussian(pose2d.coords[c], (h, w), sigma)
        maps[k, layer] = np.maximum(maps[k, layer], child_g)
        mask[k, :] = 1.0
    return maps, mask


def encode_2s(
    pose3d: Pose3D,
    pose2d: Pose2D,
    skeleton: Skeleton = None,
    grid=DEFAULT_GRID,
    sigma: float = DEFAULT_SIGMA,
) -> tuple[np.ndarray, np.ndarray]:
    """Two-state variant: both joints are placed by relative closeness.

    The closer joint goes to the positive layer and the farther one to the
    negative layer; near-equal depths (within the adaptive epsilon)
    co-locate both joints in the zero layer.  Returns (maps, mask) of shape
    (K, 3, H, W).
    """
    skeleton = skeleton or canonical_skeleton()
    h, w = int(grid[0]), int(grid[1])
    maps = np.zeros((skeleton.num_parts, 3, h, w))
    mask = np.zeros_like(maps)
    for k, (p, c) in enumerate(skeleton.parts):
        if not (
            pose3d.valid[p] and pose3d.valid[c] and pose2d.valid[p] and pose2d.valid[c]
        ):
            continue
        eps = adaptive_epsilon(pose3d, k, skeleton)
        state = tri_state(pose3d.coords[p, 2], pose3d.coords[c, 2], eps)
        parent_g = render_gaussian(pose2d.coords[p], (h, w), sigma)
        child_g = render_gaussian(pose2d.coords[c], (h, w), sigma)
        if state == 0:
            maps[k, 1] = np.maximum(parent_g, child_g)
        elif state > 0:  # child closer: child positive, parent negative
            maps[k, 2] = child_g
            maps[k, 0] = parent_g
        else:
            maps[k, 2] = parent_g
            maps[k, 0] = child_g
        mask[k, :] = 1.0
    return maps, mask


def render_heatmaps_2d(
    pose2d: Pose2D,
    grid=DEFAULT_GRID,
    sigma: float = DEFAULT_SIGMA,
) -> np.ndarray:
    """Per-joint 2D Gaussian target stack (N, H, W); invalid joints are zero."""
    h, w = int(grid[0]), int(grid[1])
    out = np.zeros((pose2d.num_joints, h, w))
    for n in range(pose2d.num_joints):
        if pose2d.valid[n]:
            out[n] = render_gaussian(pose2d.coords[n], (h, w), sigma)
    return out


def render_volumetric_target(
    pose_voxel: Pose3D,
    dims=DEFAULT_VOLUME,
    sigma_xyz=(DEFAULT_SIGMA, DEFAULT_SIGMA, DEFAULT_SIGMA),
) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint 3D Gaussian blobs on a (D, H, W) voxel grid.

    ``pose_voxel`` holds (x, y, z) voxel coordinates where x indexes W,
    y indexes H and z indexes D.  Returns (volumes, in_volume) where
    volumes is (N, D, H, W) and in_volume flags joints whose center lies
    inside the voxel hull; out-of-volume joints render their clipped tail.
    Invalid joints produce an all-zero channel.
    """
    d, h, w = (int(v) for v in dims)
    sx, sy, sz = (float(s) for s in sigma_xyz)
    if min(sx, sy, sz) <= 0:
        raise ConfigError("sigma components must be > 0")
    n_joints = pose_voxel.num_joints
    volumes = np.zeros((n_joints, d, h, w))
    in_volume = np.zeros(n_joints, dtype=bool)
    zs = np.arange(d, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    for n in range(n_joints):
        if not pose_voxel.valid[n]:
            continue
        cx, cy, cz = pose_voxel.coords[n]
        gz = np.exp(-((zs - cz) ** 2) / (2.0 * sz * sz))
        gy = np.exp(-((ys - cy) ** 2) / (2.0 * sy * sy))
        gx = np.exp(-((xs - cx) ** 2) / (2.0 * sx * sx))
        volumes[n] = gz[:, None, None] * gy[None, :, None] * gx[None, None, :]
        in_volume[n] = (
            0.0 <= cx <= w - 1 and 0.0 <= cy <= h - 1 and 0.0 <= cz <= d - 1
        )
    return volumes, in_volume


def mirror_triplets(triplets: HeatmapTriplets, skeleton: Skeleton = None) -> HeatmapTriplets:
    """Horizontally flip an encoding: mirror every layer in x and swap the
    left/right part identities.  Polarity layers stay in place because a
    horizontal flip leaves depth untouched."""
    skeleton = skeleton or canonical_skeleton()
    perm = np.asarray(skeleton.part_mirror_map(), dtype=np.intp)
    return HeatmapTriplets(
        maps=triplets.maps[perm, :, :, ::-1].copy(),
        mask=triplets.mask[perm, :, :, ::-1].copy(),
    )
