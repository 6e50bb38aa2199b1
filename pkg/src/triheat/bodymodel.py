"""Parametric body at toy scale: axis-angle rotations, forward kinematics
over a 24-joint tree, shape blend offsets and linear blend skinning.

The default rig is a procedurally generated tube body (~280 vertices): a
hexagonal vertex ring centered exactly on every joint plus a mid-bone ring
per segment.  Joint-ring vertices are single-influence and mid-bone rings
use dyadic (exactly representable) weight splits, so zero shape and zero
pose reproduce the template bit-exactly.  Real model assets can be supplied
through the same :class:`RigTemplate` container when available.

Rig-frame convention: meters, y up, pelvis at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError, InvalidRigError, NotReadyError

NUM_BODY_JOINTS = 24
NUM_SHAPE_COEFFS = 10

# Standard 24-joint kinematic tree (parent of joint j; -1 marks the root).
BODY_PARENTS = (
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
)

BODY_JOINT_NAMES = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar",
    "r_collar", "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hand", "r_hand",
)


def rodrigues(axis_angle) -> np.ndarray:
    """Axis-angle (3-vector, radians) to a rotation matrix.

    The zero vector maps to the exact identity.
    """
    v = np.asarray(axis_angle, dtype=np.float64)
    if v.shape != (3,):
        raise DimensionError("axis-angle must be a 3-vector")
    theta = float(np.linalg.norm(v))
    if theta < 1e-12:
        return np.eye(3)
    kx, ky, kz = v / theta
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_to_axis_angle(rot: np.ndarray) -> np.ndarray:
    """Log map: rotation matrix to its axis-angle vector."""
    rot = np.asarray(rot, dtype=np.float64)
    if rot.shape != (3, 3):
        raise DimensionError("rotation must be 3x3")
    cos_theta = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    skew = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    if theta < 1e-8:
        return 0.5 * skew
    if np.pi - theta < 1e-6:
        # Near a half turn the skew part vanishes; recover the axis from the
        # symmetric part's diagonal and pick consistent signs.
        diag = np.clip((np.diag(rot) + 1.0) / 2.0, 0.0, None)
        axis = np.sqrt(diag)
        major = int(np.argmax(axis))
        if axis[major] > 0:
            for i in range(3):
                if i != major and rot[major, i] + rot[i, major] < 0:
                    axis[i] = -axis[i]
        norm = np.linalg.norm(axis)
        if norm > 0:
            axis = axis / norm
        return theta * axis
    return theta * skew / (2.0 * np.sin(theta))


def project_to_rotation(mat: np.ndarray) -> np.ndarray:
    """Nearest rotation (det +1) to an arbitrary 3x3 matrix via SVD."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape != (3, 3):
        raise DimensionError("matrix must be 3x3")
    u, _, vt = np.linalg.svd(mat)
    d = np.ones(3)
    if np.linalg.det(u @ vt) < 0:
        d[-1] = -1.0
    return u @ np.diag(d) @ vt


@dataclass(frozen=True)
class BodyParams:
    """Shape coefficients (10,) and per-joint axis-angle pose (24, 3)."""

    beta: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        theta = np.asarray(self.theta, dtype=np.float64)
        if beta.shape != (NUM_SHAPE_COEFFS,):
            raise DimensionError(f"beta must be ({NUM_SHAPE_COEFFS},)")
        if theta.shape != (NUM_BODY_JOINTS, 3):
            raise DimensionError(f"theta must be ({NUM_BODY_JOINTS}, 3)")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(theta))):
            raise ConfigError("body parameters must be finite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zero(cls) -> "BodyParams":
        return cls(np.zeros(NUM_SHAPE_COEFFS), np.zeros((NUM_BODY_JOINTS, 3)))

    def rotation_matrices(self) -> np.ndarray:
        return np.stack([rodrigues(aa) for aa in self.theta])


@dataclass(frozen=True)
class RigTemplate:
    """Template geometry plus regression/skinning tensors."""

    template_vertices: np.ndarray  # (V, 3) meters
    joint_regressor: np.ndarray    # (24, V)
    parents: tuple                  # (24,) parent indices, -1 for root
    skin_weights: np.ndarray       # (V, 24), rows sum to 1
    shape_basis: np.ndarray        # (V, 3, 10)
    faces: np.ndarray              # (F, 3) int triangle indices

    def __post_init__(self):
        v = np.asarray(self.template_vertices, dtype=np.float64)
        reg = np.asarray(self.joint_regressor, dtype=np.float64)
        par = tuple(int(p) for p in self.parents)
        w = np.asarray(self.skin_weights, dtype=np.float64)
        basis = np.asarray(self.shape_basis, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int64)
        nv = v.shape[0]
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidRigError("template vertices must be (V, 3)")
        if reg.shape != (NUM_BODY_JOINTS, nv):
            raise InvalidRigError("joint regressor must be (24, V)")
        if len(par) != NUM_BODY_JOINTS or par[0] != -1:
            raise InvalidRigError("parents must be 24 entries with root first (-1)")
        for j, p in enumerate(par[1:], start=1):
            if not 0 <= p < j:
                raise InvalidRigError(
                    "parents must form a rooted tree in topological order "
                    f"(joint {j} has parent {p})"
                )
        if w.shape != (nv, NUM_BODY_JOINTS):
            raise InvalidRigError("skin weights must be (V, 24)")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-9):
            raise InvalidRigError("skin weight rows must be non-negative and sum to 1")
        if basis.shape != (nv, 3, NUM_SHAPE_COEFFS):
            raise InvalidRigError("shape basis must be (V, 3, 10)")
        if faces.size and (faces.min() < 0 or faces.max() >= nv):
            raise InvalidRigError("face indices out of range")
        object.__setattr__(self, "template_vertices", v)
        object.__setattr__(self, "joint_regressor", reg)
        object.__setattr__(self, "parents", par)
        object.__setattr__(self, "skin_weights", w)
        object.__setattr__(self, "shape_basis", basis)
        object.__setattr__(self, "faces", faces)

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]


@dataclass(frozen=True)
class BodyMesh:
    """Posed surface vertices (V, 3) and posed joints (24, 3)."""

    vertices: np.ndarray
    joints: np.ndarray


def shaped_vertices(rig: RigTemplate, beta: np.ndarray) -> np.ndarray:
    """Template plus shape blend offsets (exactly the template when beta=0)."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (NUM_SHAPE_COEFFS,):
        raise DimensionError(f"beta must be ({NUM_SHAPE_COEFFS},)")
    return rig.template_vertices + rig.shape_basis @ beta


def _rest_joints(rig: RigTemplate, beta) -> np.ndarray:
    return rig.joint_regressor @ shaped_vertices(rig, beta)


def skinning_transforms(params: BodyParams, rig: RigTemplate) -> np.ndarray:
    """Per-joint 4x4 transforms relative to the shaped rest pose.

    Built with the rotate-about-the-rest-joint recurrence
    A_j = A_parent @ [R_j | rest_j - R_j rest_j], which equals the usual
    chained global transform followed by a translate-by-minus-rest-joint,
    but is the exact identity at zero pose (so rest vertices reproduce
    bit-exactly through skinning).
    """
    rest = _rest_joints(rig, params.beta)
    rots = params.rotation_matrices()
    transforms = np.zeros((NUM_BODY_JOINTS, 4, 4))
    for j in range(NUM_BODY_JOINTS):
        local = np.eye(4)
        local[:3, :3] = rots[j]
        local[:3, 3] = rest[j] - rots[j] @ rest[j]
        p = rig.parents[j]
        transforms[j] = local if p < 0 else transforms[p] @ local
    return transforms


def forward_kinematics(params: BodyParams, rig: RigTemplate) -> np.ndarray:
    """Global 4x4 transform per joint for the shaped, posed skeleton.

    Each joint's transform chains its parent's with a local rotation about
    the shaped rest joint; the root's parent is the identity.
    """
    rest = _rest_joints(rig, params.beta)
    transforms = skinning_transforms(params, rig).copy()
    # G_j = A_j @ [I | rest_j]: the posed joint location is A_j applied to
    # its rest position.
    transforms[:, :3, 3] += np.einsum("jab,jb->ja", transforms[:, :3, :3], rest)
    return transforms


def skin(params: BodyParams, rig: RigTemplate) -> BodyMesh:
    """Pose the rig with linear blend skinning.

    Vertices are transformed by the skin-weight blend of the per-joint
    rest-relative transforms applied to the shaped template.
    """
    verts = shaped_vertices(rig, params.beta)
    rel = skinning_transforms(params, rig)
    blended = np.einsum("vj,jab->vab", rig.skin_weights, rel)
    posed = np.einsum("vab,vb->va", blended[:, :3, :3], verts) + blended[:, :3, 3]
    joints = forward_kinematics(params, rig)[:, :3, 3]
    return BodyMesh(vertices=posed, joints=joints)


def _ring_basis(direction: np.ndarray):
    d = direction / np.linalg.norm(direction)
    helper = np.array([0.0, 1.0, 0.0]) if abs(d[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


_REST_JOINTS = np.array(
    [
        [0.00, 0.00, 0.00],    # pelvis
        [0.07, -0.06, 0.00],   # l_hip
        [-0.07, -0.06, 0.00],  # r_hip
        [0.00, 0.11, 0.00],    # spine1
        [0.09, -0.46, 0.00],   # l_knee
        [-0.09, -0.46, 0.00],  # r_knee
        [0.00, 0.23, 0.00],    # spine2
        [0.10, -0.86, 0.00],   # l_ankle
        [-0.10, -0.86, 0.00],  # r_ankle
        [0.00, 0.32, 0.00],    # spine3
        [0.11, -0.92, 0.12],   # l_foot
        [-0.11, -0.92, 0.12],  # r_foot
        [0.00, 0.45, 0.00],    # neck
        [0.06, 0.40, 0.00],    # l_collar
        [-0.06, 0.40, 0.00],   # r_collar
        [0.00, 0.56, 0.00],    # head
        [0.17, 0.41, 0.00],    # l_shoulder
        [-0.17, 0.41, 0.00],   # r_shoulder
        [0.44, 0.40, 0.00],    # l_elbow
        [-0.44, 0.40, 0.00],   # r_elbow
        [0.69, 0.39, 0.00],    # l_wrist
        [-0.69, 0.39, 0.00],   # r_wrist
        [0.78, 0.38, 0.00],    # l_hand
        [-0.78, 0.38, 0.00],   # r_hand
    ]
)

_RING_SIDES = 6
_RING_RADIUS = 0.035


def make_mini_rig() -> RigTemplate:
    """Procedural tube-body rig: deterministic, license-free, ~280 vertices."""
    joints = _REST_JOINTS
    ring_angle = 2.0 * np.pi * np.arange(_RING_SIDES) / _RING_SIDES

    vertices = []
    weights = []
    ring_of_joint = {}

    def add_ring(center, direction, weight_row):
        u, w_axis = _ring_basis(direction)
        start = len(vertices)
        for ang in ring_angle:
            offset = _RING_RADIUS * (np.cos(ang) * u + np.sin(ang) * w_axis)
            vertices.append(center + offset)
            weights.append(weight_row)
        return start

    def one_hot(j):
        row = np.zeros(NUM_BODY_JOINTS)
        row[j] = 1.0
        return row

    def split(p, j, wp):
        # wp is dyadic so the row sums to exactly 1.0.
        row = np.zeros(NUM_BODY_JOINTS)
        row[p] = wp
        row[j] = 1.0 - wp
        return row

    for j in range(NUM_BODY_JOINTS):
        p = BODY_PARENTS[j]
        direction = joints[j] - joints[p] if p >= 0 else np.array([0.0, 1.0, 0.0])
        if np.linalg.norm(direction) < 1e-9:
            direction = np.array([0.0, 1.0, 0.0])
        ring_of_joint[j] = add_ring(joints[j], direction, one_hot(j))

    mid_ring_of_joint = {}
    for j in range(1, NUM_BODY_JOINTS):
        p = BODY_PARENTS[j]
        direction = joints[j] - joints[p]
        if np.linalg.norm(direction) < 1e-9:
            direction = np.array([0.0, 1.0, 0.0])
        wp = 0.5 if j % 2 == 0 else 0.25
        mid_ring_of_joint[j] = add_ring(
            0.5 * (joints[p] + joints[j]), direction, split(p, j, wp)
        )

    vertices = np.array(vertices)
    weights = np.array(weights)
    n_verts = vertices.shape[0]

    regressor = np.zeros((NUM_BODY_JOINTS, n_verts))
    for j, start in ring_of_joint.items():
        regressor[j, start : start + _RING_SIDES] = 1.0 / _RING_SIDES

    faces = []

    def stitch(ring_a, ring_b):
        for i in range(_RING_SIDES):
            a0, a1 = ring_a + i, ring_a + (i + 1) % _RING_SIDES
            b0, b1 = ring_b + i, ring_b + (i + 1) % _RING_SIDES
            faces.append((a0, b0, b1))
            faces.append((a0, b1, a1))

    for j in range(1, NUM_BODY_JOINTS):
        p = BODY_PARENTS[j]
        stitch(ring_of_joint[p], mid_ring_of_joint[j])
        stitch(mid_ring_of_joint[j], ring_of_joint[j])

    basis = np.zeros((n_verts, 3, NUM_SHAPE_COEFFS))
    basis[:, :, 0] = 0.05 * vertices                      # global size
    basis[:, 1, 1] = 0.08 * vertices[:, 1]                # vertical stretch
    basis[:, 0, 2] = 0.05 * vertices[:, 0]                # lateral width
    basis[:, 2, 3] = 0.04 * np.sin(4.0 * vertices[:, 1])  # girth wave
    for i in range(4, NUM_SHAPE_COEFFS):
        phase = 1.3 * i
        basis[:, i % 3, i] = 0.02 * np.cos(3.0 * vertices[:, (i + 1) % 3] + phase)

    return RigTemplate(
        template_vertices=vertices,
        joint_regressor=regressor,
        parents=BODY_PARENTS,
        skin_weights=weights,
        shape_basis=basis,
        faces=np.array(faces, dtype=np.int64),
    )


def mesh_to_obj(mesh: BodyMesh, faces: np.ndarray = None) -> str:
    """ASCII OBJ text for a posed mesh (vertices and optional triangles)."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    if faces is not None:
        for f in faces:
            lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    return "\n".join(lines) + "\n"


def stick_figure_obj(coords: np.ndarray, segments) -> str:
    """ASCII OBJ with line elements for a joint skeleton."""
    lines = [f"v {c[0]:.6f} {c[1]:.6f} {c[2]:.6f}" for c in coords]
    for a, b in segments:
        lines.append(f"l {a + 1} {b + 1}")
    return "\n".join(lines) + "\n"


class BodyRegressionHead:
    """Linear head mapping (3D joints, image features) to body parameters.

    Predicts shape coefficients directly and rotation matrices as
    identity-plus-residual, so a zero-weight head on zero input yields zero
    shape and identity rotations.  Predicted matrices are projected to the
    nearest rotation before being returned as axis-angle.
    """

    def __init__(self, num_joints: int = 18, feature_dim: int = 16):
        self.num_joints = num_joints
        self.feature_dim = feature_dim
        self.in_dim = 3 * num_joints + feature_dim
        self.w_beta = None
        self.b_beta = None
        self.w_mat = None
        self.b_mat = None

    @property
    def ready(self) -> bool:
        return self.w_beta is not None

    @classmethod
    def identity_init(cls, num_joints: int = 18, feature_dim: int = 16) -> "BodyRegressionHead":
        head = cls(num_joints, feature_dim)
        head.w_beta = np.zeros((head.in_dim, NUM_SHAPE_COEFFS))
        head.b_beta = np.zeros(NUM_SHAPE_COEFFS)
        head.w_mat = np.zeros((head.in_dim, NUM_BODY_JOINTS * 9))
        head.b_mat = np.zeros(NUM_BODY_JOINTS * 9)
        return head

    def _check_ready(self):
        if not self.ready:
            raise NotReadyError("regression head has no weights; train or initialize it first")

    def _input_vector(self, joints3d: np.ndarray, features: np.ndarray) -> np.ndarray:
        joints3d = np.asarray(joints3d, dtype=np.float64).reshape(-1)
        features = np.asarray(features, dtype=np.float64).reshape(-1)
        x = np.concatenate([joints3d, features])
        if x.shape[0] != self.in_dim:
            raise DimensionError(
                f"expected input of size {self.in_dim}, got {x.shape[0]}"
            )
        return x

    def predict_raw(self, joints3d, features):
        """(beta, matrices) before any rotation projection."""
        self._check_ready()
        x = self._input_vector(joints3d, features)
        beta = x @ self.w_beta + self.b_beta
        mats = np.eye(3)[None] + (x @ self.w_mat + self.b_mat).reshape(NUM_BODY_JOINTS, 3, 3)
        return beta, mats

    def predict(self, joints3d, features) -> BodyParams:
        beta, mats = self.predict_raw(joints3d, features)
        theta = np.stack([rotation_to_axis_angle(project_to_rotation(m)) for m in mats])
        return BodyParams(beta=beta, theta=theta)


def train_body_head(
    head: BodyRegressionHead,
    inputs: np.ndarray,
    gt_betas: np.ndarray,
    gt_rotations: np.ndarray,
    epochs: int = 200,
    learning_rate: float = 1e-3,
    seed: int = 0,
    pose_stage_loss: float = 0.0,
) -> list[dict]:
    """Fit the head by gradient descent on the combined body-model loss.

    ``inputs`` is (B, in_dim) already concatenated; targets are (B, 10)
    shape coefficients and (B, 24, 3, 3) rotation matrices.  The pose-stage
    total loss enters the combined objective as a constant.  Returns the
    per-epoch loss log.
    """
    rng = np.random.default_rng(seed)
    if head.w_beta is None:
        scale = 0.01 / np.sqrt(head.in_dim)
        head.w_beta = rng.normal(scale=scale, size=(head.in_dim, NUM_SHAPE_COEFFS))
        head.b_beta = np.zeros(NUM_SHAPE_COEFFS)
        head.w_mat = rng.normal(scale=scale, size=(head.in_dim, NUM_BODY_JOINTS * 9))
        head.b_mat = np.zeros(NUM_BODY_JOINTS * 9)

    batch = inputs.shape[0]
    x = ad.constant(inputs)
    identity = ad.constant(np.tile(np.eye(3).reshape(1, 9), (batch, NUM_BODY_JOINTS)).reshape(batch, -1))
    beta_target = ad.constant(np.asarray(gt_betas, dtype=np.float64))
    mat_target = ad.constant(np.asarray(gt_rotations, dtype=np.float64).reshape(batch, -1))

    w_beta = ad.constant(head.w_beta)
    b_beta = ad.constant(head.b_beta)
    w_mat = ad.constant(head.w_mat)
    b_mat = ad.constant(head.b_mat)
    params = [w_beta, b_beta, w_mat, b_mat]

    log = []
    for epoch in range(epochs):
        beta_pred = ad.add(ad.matrix_multiply(x, w_beta), b_beta)
        mat_pred = ad.add(ad.add(ad.matrix_multiply(x, w_mat), b_mat), identity)
        l_theta = ad.abs_sum(ad.sub(mat_pred, mat_target))
        l_beta = ad.abs_sum(ad.sub(beta_pred, beta_target))
        l_mesh = ad.add(ad.add(l_theta, l_beta), ad.constant(pose_stage_loss))
        ad.backward(l_mesh)
        for p in params:
            p.values -= learning_rate * p.grad / batch
        log.append(
            {
                "epoch": epoch,
                "l_theta": float(l_theta.values) / batch,
                "l_beta": float(l_beta.values) / batch,
                "l_mesh": float(l_mesh.values) / batch,
            }
        )
    head.w_beta = w_beta.values
    head.b_beta = b_beta.values
    head.w_mat = w_mat.values
    head.b_mat = b_mat.values
    return log
