"""Canonical joint/part topology and pose containers.

The joint set is the union of the two common motion-capture and 2D-pose
joint definitions: 18 named joints, of which 14 are children of exactly one
kinematic part (parent, child).  The four joints that are never a child are
the pelvis (root) and the head chain (neck, nose, head_top); torso, shoulder,
arm, hip and leg segments make up the 14 parts.  Pass a custom ``parts``
list to ``Skeleton`` to override that choice.

Depth convention used throughout the library: +z points away from the
camera, so a smaller z means closer to the viewer.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePartError, DimensionError, FormatError, InvalidJointError

JOINT_NAMES = (
    "pelvis",
    "spine",
    "thorax",
    "neck",
    "nose",
    "head_top",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
)

NUM_JOINTS = 18
NUM_PARTS = 14

_CANONICAL_PARTS = (
    (0, 1),    # pelvis -> spine
    (1, 2),    # spine -> thorax
    (2, 6),    # thorax -> l_shoulder
    (2, 7),    # thorax -> r_shoulder
    (6, 8),    # l_shoulder -> l_elbow
    (7, 9),    # r_shoulder -> r_elbow
    (8, 10),   # l_elbow -> l_wrist
    (9, 11),   # r_elbow -> r_wrist
    (0, 12),   # pelvis -> l_hip
    (0, 13),   # pelvis -> r_hip
    (12, 14),  # l_hip -> l_knee
    (13, 15),  # r_hip -> r_knee
    (14, 16),  # l_knee -> l_ankle
    (15, 17),  # r_knee -> r_ankle
)

_MIRROR_PAIRS = ((6, 7), (8, 9), (10, 11), (12, 13), (14, 15), (16, 17))

TOPOLOGY_SCHEMA = "triheat.skeleton/1"


@dataclass(frozen=True)
class Skeleton:
    """Fixed joint/part topology.  Immutable; safe to share across threads."""

    joints: tuple[str, ...] = JOINT_NAMES
    parts: tuple[tuple[int, int], ...] = _CANONICAL_PARTS
    root_index: int = 0
    mirror_pairs: tuple[tuple[int, int], ...] = _MIRROR_PAIRS

    def __post_init__(self):
        n = len(self.joints)
        if len(set(self.joints)) != n:
            raise ValueError("joint names must be unique")
        seen_children = set()
        for p, c in self.parts:
            if not (0 <= p < n and 0 <= c < n):
                raise ValueError(f"part ({p}, {c}) references a joint outside 0..{n - 1}")
            if p == c:
                raise ValueError(f"part ({p}, {c}) has identical endpoints")
            if c in seen_children:
                raise ValueError(f"joint {c} is the child of more than one part")
            seen_children.add(c)
        if self.root_index in seen_children:
            raise ValueError("root joint cannot be a part child")
        for left, right in self.mirror_pairs:
            if left == right:
                raise ValueError("mirror pair cannot map a joint to itself")
        mirror = self.mirror_map()
        for j in range(n):
            if mirror[mirror[j]] != j:
                raise ValueError("mirror_pairs is not an involution")

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def num_parts(self) -> int:
        return len(self.parts)

    def joint_index(self, name: str) -> int:
        return self.joints.index(name)

    def mirror_map(self) -> tuple[int, ...]:
        """Joint index -> mirrored joint index (identity for center joints)."""
        m = list(range(len(self.joints)))
        for left, right in self.mirror_pairs:
            m[left], m[right] = right, left
        return tuple(m)

    def part_mirror_map(self) -> tuple[int, ...]:
        """Part index -> index of the left/right mirrored part."""
        mirror = self.mirror_map()
        lookup = {pc: k for k, pc in enumerate(self.parts)}
        out = []
        for p, c in self.parts:
            mirrored = (mirror[p], mirror[c])
            if mirrored not in lookup:
                raise ValueError(f"part {(p, c)} has no mirrored counterpart {mirrored}")
            out.append(lookup[mirrored])
        return tuple(out)

    def non_child_joints(self) -> tuple[int, ...]:
        children = {c for _, c in self.parts}
        return tuple(j for j in range(len(self.joints)) if j not in children)


@dataclass(frozen=True)
class Pose3D:
    """Joint coordinates (x, y, z); millimeters unless ``voxel_space``."""

    coords: np.ndarray
    valid: np.ndarray = None
    voxel_space: bool = False

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise DimensionError(f"Pose3D coords must be (J, 3), got {coords.shape}")
        valid = self.valid
        if valid is None:
            valid = np.ones(coords.shape[0], dtype=bool)
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (coords.shape[0],):
            raise DimensionError("valid mask must have one flag per joint")
        if not np.all(np.isfinite(coords[valid])):
            raise InvalidJointError("valid joints must have finite coordinates")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "valid", valid)

    @property
    def num_joints(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class Pose2D:
    """Joint pixel coordinates (x, y)."""

    coords: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DimensionError(f"Pose2D coords must be (J, 2), got {coords.shape}")
        valid = self.valid
        if valid is None:
            valid = np.ones(coords.shape[0], dtype=bool)
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (coords.shape[0],):
            raise DimensionError("valid mask must have one flag per joint")
        if not np.all(np.isfinite(coords[valid])):
            raise InvalidJointError("valid joints must have finite coordinates")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "valid", valid)

    @property
    def num_joints(self) -> int:
        return self.coords.shape[0]


_CANONICAL = Skeleton()


def canonical_skeleton() -> Skeleton:
    """The fixed 18-joint / 14-part topology. Deterministic across calls."""
    return _CANONICAL


def part_length(pose: Pose3D, part_index: int, skeleton: Skeleton = None) -> float:
    """Euclidean distance between the two end joints of a part, in pose units."""
    skeleton = skeleton or _CANONICAL
    p, c = skeleton.parts[part_index]
    if not (pose.valid[p] and pose.valid[c]):
        raise InvalidJointError(
            f"part {part_index} endpoints ({skeleton.joints[p]}, {skeleton.joints[c]}) "
            "must both be valid"
        )
    return float(np.linalg.norm(pose.coords[c] - pose.coords[p]))


def tilt_angle(pose: Pose3D, part_index: int, skeleton: Skeleton = None) -> float:
    """Angle in degrees between a part and the x-y (image) plane, in [0, 90]."""
    skeleton = skeleton or _CANONICAL
    p, c = skeleton.parts[part_index]
    length = part_length(pose, part_index, skeleton)
    if length == 0.0:
        raise DegeneratePartError(f"part {part_index} has zero length")
    dz = abs(pose.coords[c, 2] - pose.coords[p, 2])
    # Guard the ratio against rounding slightly above 1.
    return math.degrees(math.asin(min(dz / length, 1.0)))


def topology_to_json(skeleton: Skeleton = None) -> str:
    """Serialize a topology as a versioned JSON document."""
    skeleton = skeleton or _CANONICAL
    doc = {
        "schema": TOPOLOGY_SCHEMA,
        "joints": list(skeleton.joints),
        "parts": [list(pc) for pc in skeleton.parts],
        "root_index": skeleton.root_index,
        "mirror_pairs": [list(lr) for lr in skeleton.mirror_pairs],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def topology_from_json(text: str) -> Skeleton:
    """Parse and validate a topology document written by :func:`topology_to_json`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"topology document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != TOPOLOGY_SCHEMA:
        raise FormatError(f"expected schema {TOPOLOGY_SCHEMA!r}, got {doc.get('schema')!r}")
    for key in ("joints", "parts", "root_index", "mirror_pairs"):
        if key not in doc:
            raise FormatError(f"topology document missing field {key!r}")
    try:
        return Skeleton(
            joints=tuple(str(j) for j in doc["joints"]),
            parts=tuple((int(p), int(c)) for p, c in doc["parts"]),
            root_index=int(doc["root_index"]),
            mirror_pairs=tuple((int(a), int(b)) for a, b in doc["mirror_pairs"]),
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid topology document: {exc}") from exc


def topology_hash(skeleton: Skeleton = None) -> str:
    """Stable SHA-256 of the canonical JSON form; constant across runs."""
    return hashlib.sha256(topology_to_json(skeleton).encode("utf-8")).hexdigest()


# A plausible standing pose (mm, x right / y down / z away from camera) used
# by fixtures, demos and the synthetic training data.  Not a dataset value.
_REFERENCE_COORDS = np.array(
    [
        [0.0, 0.0, 0.0],        # pelvis
        [0.0, -150.0, 10.0],    # spine
        [0.0, -300.0, 20.0],    # thorax
        [0.0, -390.0, 10.0],    # neck
        [0.0, -440.0, -40.0],   # nose
        [0.0, -510.0, 0.0],     # head_top
        [95.0, -285.0, 15.0],   # l_shoulder
        [-95.0, -285.0, 15.0],  # r_shoulder
        [120.0, -120.0, 25.0],  # l_elbow
        [-120.0, -120.0, 25.0], # r_elbow
        [130.0, 30.0, 10.0],    # l_wrist
        [-130.0, 30.0, 10.0],   # r_wrist
        [65.0, 15.0, 0.0],      # l_hip
        [-65.0, 15.0, 0.0],     # r_hip
        [70.0, 440.0, 15.0],    # l_knee
        [-70.0, 440.0, 15.0],   # r_knee
        [75.0, 860.0, 30.0],    # l_ankle
        [-75.0, 860.0, 30.0],   # r_ankle
    ]
)


def reference_pose() -> Pose3D:
    """Standing reference pose in millimeters, root at the origin."""
    return Pose3D(coords=_REFERENCE_COORDS.copy())
