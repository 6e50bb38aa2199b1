"""Pose evaluation metrics: hip-aligned and Procrustes-aligned MPJPE,
percentage-of-correct-keypoints at a 3D threshold, and its area under the
threshold-sweep curve.

Alignment conventions: hip alignment translates both poses so the root sits
at the origin; Procrustes alignment solves the optimal similarity transform
(rotation + translation + uniform scale by default) in closed form from the
singular value decomposition of the cross-covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AlignmentDegenerateError,
    ConfigError,
    DimensionError,
    EmptyEvaluationError,
    InvalidJointError,
)
from .skeleton import Pose3D, Skeleton, canonical_skeleton

DEFAULT_PCK_THRESHOLD_MM = 150.0
DEFAULT_AUC_STEPS = 31


def _joint_pairs(pred: Pose3D, gt: Pose3D):
    if pred.num_joints != gt.num_joints:
        raise DimensionError("poses must have the same joint count")
    both = pred.valid & gt.valid
    if not both.any():
        raise EmptyEvaluationError("no jointly valid joints to evaluate")
    return both


def hip_aligned_errors(
    pred: Pose3D, gt: Pose3D, skeleton: Skeleton = None
) -> np.ndarray:
    """Per-joint Euclidean error after moving both roots to the origin.

    Returns a full-length array with NaN at joints not jointly valid; the
    root's entry is 0 by construction.
    """
    skeleton = skeleton or canonical_skeleton()
    root = skeleton.root_index
    if not (pred.valid[root] and gt.valid[root]):
        raise InvalidJointError("root joint must be valid in both poses")
    both = _joint_pairs(pred, gt)
    p = pred.coords - pred.coords[root]
    g = gt.coords - gt.coords[root]
    errors = np.full(pred.num_joints, np.nan)
    errors[both] = np.linalg.norm(p[both] - g[both], axis=1)
    return errors


def _aggregated_errors(pred: Pose3D, gt: Pose3D, skeleton: Skeleton):
    """Hip-aligned errors over the joints that enter the aggregates.

    The root is pinned to the origin by the alignment, so it is excluded
    from means and rates.
    """
    errors = hip_aligned_errors(pred, gt, skeleton)
    errors[skeleton.root_index] = np.nan
    errors = errors[~np.isnan(errors)]
    if errors.size == 0:
        raise EmptyEvaluationError("no jointly valid non-root joints to evaluate")
    return errors


def mpjpe(pred: Pose3D, gt: Pose3D, skeleton: Skeleton = None) -> float:
    """Mean per-joint error in millimeters after root alignment."""
    skeleton = skeleton or canonical_skeleton()
    return float(_aggregated_errors(pred, gt, skeleton).mean())


def procrustes_align(
    source: np.ndarray, target: np.ndarray, with_scale: bool = True
):
    """Closed-form similarity alignment of ``source`` onto ``target``.

    Both are (n, 3) point sets.  Returns (scale, rotation, translation) such
    that scale * source @ rotation.T + translation best fits target in the
    least-squares sense; rotation has determinant +1 (reflections are folded
    into the sign correction).  Raises for collinear/underdetermined sets.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise DimensionError("point sets must both be (n, 3)")
    n = source.shape[0]
    if n < 3:
        raise AlignmentDegenerateError("alignment needs at least 3 points")
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    sc = source - mu_s
    tc = target - mu_t
    spread = np.linalg.svd(sc, compute_uv=False)
    if spread[0] == 0.0 or spread[1] / spread[0] < 1e-9:
        raise AlignmentDegenerateError("source points are collinear or coincident")
    cov = tc.T @ sc / n
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        d[-1] = -1.0
    rotation = u @ np.diag(d) @ vt
    if with_scale:
        var_s = (sc * sc).sum() / n
        scale = float((s * d).sum() / var_s)
    else:
        scale = 1.0
    translation = mu_t - scale * rotation @ mu_s
    return scale, rotation, translation


def pa_mpjpe(
    pred: Pose3D, gt: Pose3D, with_scale: bool = True, skeleton: Skeleton = None
) -> float:
    """Mean per-joint error after optimal similarity (Procrustes) alignment.

    ``with_scale=False`` restricts the alignment to a rigid transform.
    """
    both = _joint_pairs(pred, gt)
    if both.sum() < 3:
        raise AlignmentDegenerateError("alignment needs at least 3 jointly valid joints")
    source = pred.coords[both]
    target = gt.coords[both]
    scale, rotation, translation = procrustes_align(source, target, with_scale)
    aligned = scale * source @ rotation.T + translation
    return float(np.linalg.norm(aligned - target, axis=1).mean())


def pck3d(
    pred: Pose3D,
    gt: Pose3D,
    threshold_mm: float = DEFAULT_PCK_THRESHOLD_MM,
    skeleton: Skeleton = None,
) -> float:
    """Percent of jointly valid non-root joints with hip-aligned error
    strictly below the threshold."""
    skeleton = skeleton or canonical_skeleton()
    errors = _aggregated_errors(pred, gt, skeleton)
    return float(100.0 * np.mean(errors < threshold_mm))


def auc_thresholds(max_threshold_mm: float, steps: int) -> np.ndarray:
    """Evenly spaced sweep thresholds covering (0, max]: the right
    endpoints of an even partition, so a zero-error pose scores 100."""
    if steps < 2:
        raise ConfigError("auc needs at least 2 threshold steps")
    return max_threshold_mm * np.arange(1, steps + 1) / steps


def auc(
    pred: Pose3D,
    gt: Pose3D,
    max_threshold_mm: float = DEFAULT_PCK_THRESHOLD_MM,
    steps: int = DEFAULT_AUC_STEPS,
    skeleton: Skeleton = None,
) -> float:
    """Mean PCK over the :func:`auc_thresholds` sweep."""
    skeleton = skeleton or canonical_skeleton()
    errors = _aggregated_errors(pred, gt, skeleton)
    pcks = [100.0 * np.mean(errors < t) for t in auc_thresholds(max_threshold_mm, steps)]
    return float(np.mean(pcks))


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics for one prediction/ground-truth pair or group."""

    mpjpe_mm: float
    pa_mpjpe_mm: float
    pck_percent: float
    auc_percent: float
    per_joint_errors: np.ndarray
    alignment: str = "hip"

    def to_json_dict(self) -> dict:
        return {
            "mpjpe_mm": self.mpjpe_mm,
            "pa_mpjpe_mm": self.pa_mpjpe_mm,
            "pck_percent": self.pck_percent,
            "auc_percent": self.auc_percent,
            "per_joint_errors_mm": [
                None if np.isnan(v) else float(v) for v in self.per_joint_errors
            ],
            "alignment": self.alignment,
        }


def evaluate_pair(
    pred: Pose3D,
    gt: Pose3D,
    threshold_mm: float = DEFAULT_PCK_THRESHOLD_MM,
    auc_steps: int = DEFAULT_AUC_STEPS,
    with_scale: bool = True,
    skeleton: Skeleton = None,
) -> EvalReport:
    """All four metrics for one pose pair; per-joint errors are hip-aligned."""
    return EvalReport(
        mpjpe_mm=mpjpe(pred, gt, skeleton),
        pa_mpjpe_mm=pa_mpjpe(pred, gt, with_scale, skeleton),
        pck_percent=pck3d(pred, gt, threshold_mm, skeleton),
        auc_percent=auc(pred, gt, threshold_mm, auc_steps, skeleton),
        per_joint_errors=hip_aligned_errors(pred, gt, skeleton),
        alignment="hip",
    )
