"""Training objectives for pose and body-model regression.

All losses are plain sums (no batch averaging, which is the trainer's
concern).  ``normalize=True`` optionally divides the pixel-wise losses by
their element count; the default keeps the raw sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .heatmaps import HeatmapTriplets
from .skeleton import Pose3D

DEFAULT_ALPHA = 0.05


def hemlets_loss(pred, gt: HeatmapTriplets, normalize: bool = False) -> float:
    """Masked squared-L2 distance between predicted and target triplets.

    ``pred`` may be a HeatmapTriplets or a raw (K, 3, H, W) array; the
    target's binary mask gates every element.
    """
    pred_maps = pred.maps if isinstance(pred, HeatmapTriplets) else np.asarray(pred, dtype=np.float64)
    if pred_maps.shape != gt.maps.shape:
        raise DimensionError(
            f"prediction shape {pred_maps.shape} does not match target {gt.maps.shape}"
        )
    residual = (gt.maps - pred_maps) * gt.mask
    total = float(np.sum(residual * residual))
    return total / residual.size if normalize else total


def heatmap2d_loss(pred: np.ndarray, gt: np.ndarray, normalize: bool = False) -> float:
    """Squared-L2 distance between per-joint 2D heatmap stacks (N, H, W)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction shape {pred.shape} does not match target {gt.shape}")
    residual = gt - pred
    total = float(np.sum(residual * residual))
    return total / residual.size if normalize else total


def joint3d_loss(pred: Pose3D, gt: Pose3D, lam: int = 1) -> float:
    """L1 joint-coordinate loss with the depth term gated by ``lam``.

    Sums |dx| + |dy| + lam * |dz| over joints valid in both poses; lam is 0
    for 2D-only supervision and 1 for full 3D supervision.
    """
    if lam not in (0, 1):
        raise ConfigError("lambda gate must be 0 or 1")
    if pred.num_joints != gt.num_joints:
        raise DimensionError("poses must have the same joint count")
    both = pred.valid & gt.valid
    if not both.any():
        return 0.0
    diff = np.abs(pred.coords[both] - gt.coords[both])
    return float(diff[:, 0].sum() + diff[:, 1].sum() + lam * diff[:, 2].sum())


def intermediate_loss(l_hem: float, l_2d: float) -> float:
    """Intermediate supervision: triplet loss plus 2D heatmap loss."""
    return l_hem + l_2d


def total_loss(l_int: float, l_3d: float, alpha: float = DEFAULT_ALPHA) -> float:
    """End-to-end loss: alpha * intermediate + 3D joint loss."""
    return alpha * l_int + l_3d


def smpl_pose_loss(pred_rot: np.ndarray, gt_rot: np.ndarray, norm: str = "l1") -> float:
    """Distance between two sets of per-joint rotation matrices.

    ``norm`` is "l1" (element-wise absolute sum, the default) or
    "frobenius" (sum of per-matrix Frobenius norms).
    """
    pred_rot = np.asarray(pred_rot, dtype=np.float64)
    gt_rot = np.asarray(gt_rot, dtype=np.float64)
    if pred_rot.shape != gt_rot.shape or pred_rot.ndim != 3 or pred_rot.shape[1:] != (3, 3):
        raise DimensionError("rotation sets must both be (J, 3, 3)")
    diff = gt_rot - pred_rot
    if norm == "l1":
        return float(np.abs(diff).sum())
    if norm == "frobenius":
        return float(np.sqrt((diff * diff).sum(axis=(1, 2))).sum())
    raise ConfigError("norm must be 'l1' or 'frobenius'")


def smpl_shape_loss(pred_beta: np.ndarray, gt_beta: np.ndarray) -> float:
    """L1 distance between 10-vector shape coefficients."""
    pred_beta = np.asarray(pred_beta, dtype=np.float64)
    gt_beta = np.asarray(gt_beta, dtype=np.float64)
    if pred_beta.shape != gt_beta.shape or pred_beta.ndim != 1:
        raise DimensionError("shape coefficient vectors must match and be 1-D")
    return float(np.abs(gt_beta - pred_beta).sum())


def mesh_loss(l_theta: float, l_beta: float, l_tot: float) -> float:
    """Combined body-model loss: pose + shape + pose-stage total."""
    return l_theta + l_beta + l_tot


@dataclass(frozen=True)
class LossBreakdown:
    """One training step's loss components.

    Derived fields obey l_int = l_hem + l_2d, l_tot = alpha*l_int + l_3d and,
    when the body-model terms are active, l_mesh = l_theta + l_beta + l_tot.
    """

    l_hem: float
    l_2d: float
    l_3d: float
    l_int: float
    l_tot: float
    lambda_flag: int = 1
    alpha: float = DEFAULT_ALPHA
    l_theta: float = 0.0
    l_beta: float = 0.0
    l_mesh: float = 0.0

    @classmethod
    def from_components(
        cls,
        l_hem: float,
        l_2d: float,
        l_3d: float,
        lambda_flag: int = 1,
        alpha: float = DEFAULT_ALPHA,
        l_theta: float = None,
        l_beta: float = None,
    ) -> "LossBreakdown":
        l_int = intermediate_loss(l_hem, l_2d)
        l_tot = total_loss(l_int, l_3d, alpha)
        body_active = l_theta is not None or l_beta is not None
        l_theta = l_theta or 0.0
        l_beta = l_beta or 0.0
        return cls(
            l_hem=l_hem,
            l_2d=l_2d,
            l_3d=l_3d,
            l_int=l_int,
            l_tot=l_tot,
            lambda_flag=lambda_flag,
            alpha=alpha,
            l_theta=l_theta,
            l_beta=l_beta,
            l_mesh=mesh_loss(l_theta, l_beta, l_tot) if body_active else 0.0,
        )

    def to_json_dict(self) -> dict:
        return {
            "l_hem": self.l_hem,
            "l_2d": self.l_2d,
            "l_3d": self.l_3d,
            "l_int": self.l_int,
            "l_tot": self.l_tot,
            "lambda": self.lambda_flag,
            "alpha": self.alpha,
            "l_theta": self.l_theta,
            "l_beta": self.l_beta,
            "l_mesh": self.l_mesh,
        }
