"""Weak depth-label ingestion, the annotator noise simulator, and the
line-delimited pose/annotation file formats.

Label semantics (the single source of truth for the sign convention):
"forward" means the child joint is closer to the camera than its parent,
i.e. z_c < z_p under the +z-away-from-camera convention, which is the +1
tri-state.  "backward" is the -1 state; "unknown" carries no supervision.

Files are JSON-lines documents whose first line is a header record with an
explicit ``schema`` field; see docs/FORMATS.md for the full layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .heatmaps import adaptive_epsilon, tri_state
from .skeleton import Pose2D, Pose3D, Skeleton, canonical_skeleton, tilt_angle

FORWARD = "forward"
BACKWARD = "backward"
UNKNOWN = "unknown"
FBI_LABELS = (FORWARD, BACKWARD, UNKNOWN)

LABEL_TO_POLARITY = {FORWARD: 1, BACKWARD: -1}
POLARITY_TO_LABEL = {1: FORWARD, -1: BACKWARD}

CLOSER = "closer"
FARTHER = "farther"
AMBIGUOUS = "ambiguous"
ORDINAL_RELATIONS = (CLOSER, FARTHER, AMBIGUOUS)

POSE_SCHEMA = "triheat.poses/1"
FBI_SCHEMA = "triheat.fbi/1"
ORDINAL_SCHEMA = "triheat.ordinal/1"


@dataclass(frozen=True)
class FBIRecord:
    """One image's weak annotation: 2D joints plus a per-part label."""

    image_id: str
    joints2d: Pose2D
    labels: tuple  # one of FBI_LABELS per part

    def __post_init__(self):
        for lab in self.labels:
            if lab not in FBI_LABELS:
                raise ConfigError(f"unknown label {lab!r}")


@dataclass(frozen=True)
class FBIAnnotationSet:
    records: tuple

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class OrdinalRecord:
    """Pairwise depth relations (i, j, relation): joint i is
    closer/farther than joint j, or the pair is ambiguous."""

    image_id: str
    joints2d: Pose2D
    pairs: tuple  # of (i, j, relation)

    def __post_init__(self):
        for i, j, rel in self.pairs:
            if rel not in ORDINAL_RELATIONS:
                raise ConfigError(f"unknown relation {rel!r}")
            if i == j:
                raise ConfigError("ordinal pair must reference two distinct joints")


@dataclass(frozen=True)
class OrdinalAnnotationSet:
    records: tuple

    def __len__(self):
        return len(self.records)


def ordinal_to_fbi(
    ordinal: OrdinalAnnotationSet, skeleton: Skeleton = None
) -> FBIAnnotationSet:
    """Keep only relations along canonical parts and relabel them.

    A pair (parent, child, closer) means the parent is nearer, i.e. the
    child is deeper: "backward".  Pairs between disconnected joints and
    ambiguous pairs are dropped; unmentioned parts stay "unknown".
    """
    skeleton = skeleton or canonical_skeleton()
    part_of = {pc: k for k, pc in enumerate(skeleton.parts)}
    records = []
    for rec in ordinal.records:
        labels = [UNKNOWN] * skeleton.num_parts
        for i, j, rel in rec.pairs:
            if rel == AMBIGUOUS:
                continue
            if (i, j) in part_of:
                k, parent_is_first = part_of[(i, j)], True
            elif (j, i) in part_of:
                k, parent_is_first = part_of[(j, i)], False
            else:
                continue
            first_closer = rel == CLOSER
            parent_closer = first_closer if parent_is_first else not first_closer
            labels[k] = BACKWARD if parent_closer else FORWARD
        records.append(FBIRecord(rec.image_id, rec.joints2d, tuple(labels)))
    return FBIAnnotationSet(records=tuple(records))


def fbi_to_mask(
    record: FBIRecord, mask_unknown_fully: bool = False, skeleton: Skeleton = None
):
    """Per-part polarity targets and layer mask for one annotation.

    Returns (polarity, supervised, layer_mask): polarity is (K,) in
    {-1, 0, +1} (0 where unknown), supervised is (K,) bool, and layer_mask
    is (K, 3) with unknown parts keeping only the zero layer unless
    ``mask_unknown_fully``.
    """
    skeleton = skeleton or canonical_skeleton()
    if len(record.labels) != skeleton.num_parts:
        raise DimensionError("record must carry one label per part")
    polarity = np.zeros(skeleton.num_parts, dtype=np.int64)
    supervised = np.zeros(skeleton.num_parts, dtype=bool)
    layer_mask = np.zeros((skeleton.num_parts, 3))
    for k, lab in enumerate(record.labels):
        if lab == UNKNOWN:
            if not mask_unknown_fully:
                layer_mask[k, 1] = 1.0
            continue
        polarity[k] = LABEL_TO_POLARITY[lab]
        supervised[k] = True
        layer_mask[k, :] = 1.0
    return polarity, supervised, layer_mask


@dataclass(frozen=True)
class NoiseProfile:
    """Tilt-banded annotator behavior: (error_rate, skip_rate) per band.

    Above ``high_edge`` degrees the reliable-band rates apply; below
    ``low_edge`` the difficult-band rates apply; in between, rates are
    linearly interpolated (an implementation choice for a band with no
    reported numbers).
    """

    reliable: tuple = (0.074, 0.10)
    difficult: tuple = (0.20, 0.25)
    low_edge: float = 20.0
    high_edge: float = 30.0

    def __post_init__(self):
        for pair in (self.reliable, self.difficult):
            for rate in pair:
                if not 0.0 <= rate <= 1.0:
                    raise ConfigError(f"rate {rate} outside [0, 1]")
        if not 0.0 <= self.low_edge <= self.high_edge:
            raise ConfigError("band edges must satisfy 0 <= low_edge <= high_edge")

    def rates(self, tilt_deg: float):
        if tilt_deg > self.high_edge:
            return self.reliable
        if tilt_deg < self.low_edge:
            return self.difficult
        if self.high_edge == self.low_edge:
            return self.reliable
        t = (tilt_deg - self.low_edge) / (self.high_edge - self.low_edge)
        err = self.difficult[0] + t * (self.reliable[0] - self.difficult[0])
        skip = self.difficult[1] + t * (self.reliable[1] - self.difficult[1])
        return err, skip


NOISE_FREE = NoiseProfile(reliable=(0.0, 0.0), difficult=(0.0, 0.0))


def simulate_fbi_annotator(
    gt_poses,
    gt_poses2d,
    noise_profile: NoiseProfile = NoiseProfile(),
    seed: int = 0,
    skeleton: Skeleton = None,
    image_ids=None,
) -> FBIAnnotationSet:
    """Simulate a human annotator labeling parts of ground-truth poses.

    Per part: invalid endpoints or a near-equal-depth truth (tri-state 0)
    are skipped outright; otherwise the part is skipped with the band's
    skip rate, else labeled with the true direction and flipped with the
    band's error rate.  Deterministic for a fixed seed.
    """
    skeleton = skeleton or canonical_skeleton()
    rng = np.random.default_rng(seed)
    records = []
    for idx, (pose3d, pose2d) in enumerate(zip(gt_poses, gt_poses2d)):
        labels = []
        for k, (p, c) in enumerate(skeleton.parts):
            if not (pose3d.valid[p] and pose3d.valid[c]):
                labels.append(UNKNOWN)
                continue
            eps = adaptive_epsilon(pose3d, k, skeleton)
            state = tri_state(pose3d.coords[p, 2], pose3d.coords[c, 2], eps)
            if state == 0:
                labels.append(UNKNOWN)
                continue
            err_rate, skip_rate = noise_profile.rates(tilt_angle(pose3d, k, skeleton))
            if rng.random() < skip_rate:
                labels.append(UNKNOWN)
                continue
            if rng.random() < err_rate:
                state = -state
            labels.append(POLARITY_TO_LABEL[state])
        image_id = image_ids[idx] if image_ids is not None else f"sim_{idx:06d}"
        records.append(FBIRecord(image_id, pose2d, tuple(labels)))
    return FBIAnnotationSet(records=tuple(records))


# ---------------------------------------------------------------------------
# Line-delimited file formats (JSON lines with a schema header record).


def _dump_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _parse_lines(text: str, expected_schema: str):
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise FormatError("file is empty", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"header is not valid JSON: {exc}", line=1) from exc
    if not isinstance(header, dict) or header.get("schema") != expected_schema:
        raise FormatError(
            f"expected schema {expected_schema!r}, got {header.get('schema')!r}", line=1
        )
    records = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            records.append((lineno, json.loads(raw)))
        except json.JSONDecodeError as exc:
            raise FormatError(f"record is not valid JSON: {exc}", line=lineno) from exc
    return header, records


def _coords_from(doc, key, lineno, width):
    try:
        coords = np.asarray(doc[key], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"missing or malformed {key!r}", line=lineno) from exc
    if coords.ndim != 2 or coords.shape[1] != width:
        raise FormatError(f"{key!r} must be (J, {width})", line=lineno)
    return coords


def _valid_from(doc, lineno, n_joints):
    valid = doc.get("valid")
    if valid is None:
        return np.ones(n_joints, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (n_joints,):
        raise FormatError("'valid' must have one flag per joint", line=lineno)
    return valid


def poses_to_jsonl(
    poses3d,
    poses2d=None,
    ids=None,
    groups=None,
    skeleton: Skeleton = None,
) -> str:
    """Serialize poses (3D, optionally with matching 2D) to JSON lines."""
    skeleton = skeleton or canonical_skeleton()
    out = [
        _dump_line(
            {"schema": POSE_SCHEMA, "joints": skeleton.num_joints, "names": list(skeleton.joints)}
        )
    ]
    for idx, pose in enumerate(poses3d):
        rec = {
            "id": ids[idx] if ids is not None else f"pose_{idx:06d}",
            "coords3d": [[float(v) for v in row] for row in pose.coords],
            "valid": [bool(v) for v in pose.valid],
        }
        if groups is not None:
            rec["group"] = groups[idx]
        if poses2d is not None:
            rec["coords2d"] = [[float(v) for v in row] for row in poses2d[idx].coords]
        out.append(_dump_line(rec))
    return "".join(out)


def poses_from_jsonl(text: str, skeleton: Skeleton = None):
    """Parse a pose file; returns (poses3d, poses2d_or_None_list, ids, groups)."""
    skeleton = skeleton or canonical_skeleton()
    header, records = _parse_lines(text, POSE_SCHEMA)
    n = int(header.get("joints", skeleton.num_joints))
    if n != skeleton.num_joints:
        raise FormatError(
            f"file declares {n} joints but the skeleton has {skeleton.num_joints}", line=1
        )
    poses3d, poses2d, ids, groups = [], [], [], []
    for lineno, doc in records:
        coords = _coords_from(doc, "coords3d", lineno, 3)
        if coords.shape[0] != n:
            raise FormatError(f"expected {n} joints, got {coords.shape[0]}", line=lineno)
        valid = _valid_from(doc, lineno, n)
        poses3d.append(Pose3D(coords=coords, valid=valid))
        if "coords2d" in doc:
            c2 = _coords_from(doc, "coords2d", lineno, 2)
            if c2.shape[0] != n:
                raise FormatError(f"expected {n} joints, got {c2.shape[0]}", line=lineno)
            poses2d.append(Pose2D(coords=c2, valid=valid))
        else:
            poses2d.append(None)
        ids.append(str(doc.get("id", f"pose_{lineno:06d}")))
        groups.append(doc.get("group"))
    return poses3d, poses2d, ids, groups


def fbi_to_jsonl(annotations: FBIAnnotationSet, skeleton: Skeleton = None) -> str:
    skeleton = skeleton or canonical_skeleton()
    out = [_dump_line({"schema": FBI_SCHEMA, "parts": skeleton.num_parts})]
    for rec in annotations.records:
        out.append(
            _dump_line(
                {
                    "id": rec.image_id,
                    "joints2d": [[float(v) for v in row] for row in rec.joints2d.coords],
                    "valid": [bool(v) for v in rec.joints2d.valid],
                    "labels": list(rec.labels),
                }
            )
        )
    return "".join(out)


def fbi_from_jsonl(text: str, skeleton: Skeleton = None) -> FBIAnnotationSet:
    skeleton = skeleton or canonical_skeleton()
    header, records = _parse_lines(text, FBI_SCHEMA)
    if int(header.get("parts", -1)) != skeleton.num_parts:
        raise FormatError(
            f"file declares {header.get('parts')} parts but the skeleton has "
            f"{skeleton.num_parts}",
            line=1,
        )
    out = []
    for lineno, doc in records:
        coords = _coords_from(doc, "joints2d", lineno, 2)
        valid = _valid_from(doc, lineno, coords.shape[0])
        labels = doc.get("labels")
        if not isinstance(labels, list) or len(labels) != skeleton.num_parts:
            raise FormatError("'labels' must list one label per part", line=lineno)
        for lab in labels:
            if lab not in FBI_LABELS:
                raise FormatError(f"unknown label {lab!r}", line=lineno)
        out.append(
            FBIRecord(
                str(doc.get("id", f"img_{lineno:06d}")),
                Pose2D(coords=coords, valid=valid),
                tuple(labels),
            )
        )
    return FBIAnnotationSet(records=tuple(out))


def ordinal_from_jsonl(text: str) -> OrdinalAnnotationSet:
    header, records = _parse_lines(text, ORDINAL_SCHEMA)
    out = []
    for lineno, doc in records:
        coords = _coords_from(doc, "joints2d", lineno, 2)
        valid = _valid_from(doc, lineno, coords.shape[0])
        pairs = doc.get("pairs")
        if not isinstance(pairs, list):
            raise FormatError("'pairs' must be a list of [i, j, relation]", line=lineno)
        parsed = []
        for item in pairs:
            try:
                i, j, rel = int(item[0]), int(item[1]), str(item[2])
            except (TypeError, ValueError, IndexError) as exc:
                raise FormatError(f"malformed pair {item!r}", line=lineno) from exc
            if rel not in ORDINAL_RELATIONS:
                raise FormatError(f"unknown relation {rel!r}", line=lineno)
            parsed.append((i, j, rel))
        out.append(
            OrdinalRecord(
                str(doc.get("id", f"img_{lineno:06d}")),
                Pose2D(coords=coords, valid=valid),
                tuple(parsed),
            )
        )
    return OrdinalAnnotationSet(records=tuple(out))


def ordinal_to_jsonl(annotations: OrdinalAnnotationSet) -> str:
    out = [_dump_line({"schema": ORDINAL_SCHEMA})]
    for rec in annotations.records:
        out.append(
            _dump_line(
                {
                    "id": rec.image_id,
                    "joints2d": [[float(v) for v in row] for row in rec.joints2d.coords],
                    "valid": [bool(v) for v in rec.joints2d.valid],
                    "pairs": [[i, j, rel] for i, j, rel in rec.pairs],
                }
            )
        )
    return "".join(out)
