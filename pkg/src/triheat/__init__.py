"""Part-centric triplet heatmaps for 3D human pose at desk scale.

The library covers the full target-side pipeline: a canonical 18-joint /
14-part skeleton, triplet heatmap encoding and decoding (with five-state
and two-state variants), differentiable soft-argmax readout, the complete
loss stack, weak depth-label ingestion and simulation, evaluation metrics,
a toy parametric body model, and a tape-based autodiff engine that trains a
small regressor end to end through all of it.
"""

__version__ = "0.1.0"

from .skeleton import (
    Pose2D,
    Pose3D,
    Skeleton,
    canonical_skeleton,
    part_length,
    reference_pose,
    tilt_angle,
)
from .heatmaps import (
    HeatmapTriplets,
    adaptive_epsilon,
    decode_hemlets_polarity,
    encode_2s,
    encode_5s,
    encode_from_labels,
    encode_hemlets,
    render_gaussian,
    render_heatmaps_2d,
    render_volumetric_target,
    tri_state,
)
from .integral import (
    BoneLengthModel,
    SoftArgmaxConfig,
    soft_argmax_2d,
    soft_argmax_3d,
    update_bone_lengths,
    voxel_to_metric,
)
from .losses import (
    LossBreakdown,
    heatmap2d_loss,
    hemlets_loss,
    joint3d_loss,
    mesh_loss,
    smpl_pose_loss,
    smpl_shape_loss,
    total_loss,
)
from .metrics import EvalReport, auc, evaluate_pair, mpjpe, pa_mpjpe, pck3d
from .bodymodel import (
    BodyMesh,
    BodyParams,
    BodyRegressionHead,
    RigTemplate,
    forward_kinematics,
    make_mini_rig,
    rodrigues,
    skin,
)

__all__ = [name for name in dir() if not name.startswith("_")]
