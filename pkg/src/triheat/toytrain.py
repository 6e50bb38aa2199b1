"""Desk-scale end-to-end training through the full differentiable pipeline.

A small fully connected regressor maps noisy 2D joint observations (plus
per-part relative-depth hints) to per-joint volumetric logits.  Soft-argmax
turns logits into coordinates, and training minimizes either the 3D joint
loss alone or the full objective with the intermediate triplet/2D-heatmap
supervision attached to auxiliary heads that feed forward into the
volumetric head.  Everything runs in float64 on the tape engine, so a fixed
seed reproduces runs bitwise (single-threaded).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, TrainingDivergedError
from .heatmaps import encode_from_labels, part_polarities, render_heatmaps_2d
from .losses import DEFAULT_ALPHA, LossBreakdown
from .skeleton import Pose2D, Pose3D, Skeleton, canonical_skeleton, reference_pose
from .transforms import _rot2d


@dataclass(frozen=True)
class ToyDataConfig:
    """Synthetic dataset shape, noise levels and supervision mixture.

    ``fraction_3d`` of the training samples carry full 3D supervision
    (lambda=1); the rest mimic weakly annotated images: the 3D joint loss
    covers only x and y (lambda=0) while the triplet targets still carry
    the true per-part polarity, exactly the situation relative-depth
    labels create.  The input hints are flipped with
    ``hint_flip_probability`` but the targets stay clean, so the
    intermediate supervision also acts as a denoising teacher.
    Validation samples are always fully 3D.
    """

    num_train: int = 192
    num_val: int = 64
    volume: tuple = (8, 8, 8)        # (D, H, W) voxels
    heatmap: tuple = (12, 12)        # intermediate target resolution
    sigma_heatmap: float = 1.5
    jitter_mm: float = 55.0
    max_inplane_deg: float = 15.0
    # body turn: couples joint depths to the 2D layout. A one-sided range
    # keeps the orientation (and with it every depth) recoverable from the
    # projection alone; a symmetric range would leave the turn direction,
    # and therefore depth, ambiguous.
    yaw_range_deg: tuple = (15.0, 75.0)
    max_pitch_deg: float = 20.0
    obs_noise_voxels: float = 0.5
    include_hints: bool = False
    hint_flip_probability: float = 0.0
    fraction_3d: float = 0.25

    def __post_init__(self):
        if self.num_train < 1 or self.num_val < 1:
            raise ConfigError("dataset sizes must be positive")
        if not 0.0 <= self.hint_flip_probability <= 1.0:
            raise ConfigError("hint_flip_probability must lie in [0, 1]")
        if not 0.0 <= self.fraction_3d <= 1.0:
            raise ConfigError("fraction_3d must lie in [0, 1]")


@dataclass(frozen=True)
class ToyDataset:
    """Flattened observations plus every supervision target."""

    inputs: np.ndarray        # (B, 2N + K)
    gt_voxels: np.ndarray     # (B, N, 3) voxel-frame joint coordinates
    valid: np.ndarray         # (B, N) bool
    hem_maps: np.ndarray      # (B, K, 3, h, w)
    hem_mask: np.ndarray      # (B, K, 3, h, w)
    heat2d: np.ndarray        # (B, N, h, w)
    lambda_flags: np.ndarray  # (B,) 1 = full 3D supervision, 0 = x/y only
    volume: tuple
    heatmap: tuple

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def _voxelize(coords_mm: np.ndarray, volume) -> np.ndarray:
    """Root-relative millimeters to voxel coordinates, fixed dataset scale."""
    d, h, w = volume
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0, (d - 1) / 2.0])
    # The reference pose spans roughly +-1 m around the pelvis; keep a
    # half-voxel margin at the default 8^3 volume.
    scale = (min(d, h, w) / 2.0 - 0.5) / 1150.0
    return center + coords_mm * scale


def _yaw_pitch(yaw_rad: float, pitch_rad: float) -> np.ndarray:
    cy, sy = np.cos(yaw_rad), np.sin(yaw_rad)
    cp, sp = np.cos(pitch_rad), np.sin(pitch_rad)
    about_y = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    about_x = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return about_x @ about_y


def _random_pose_mm(rng: np.random.Generator, config: ToyDataConfig) -> np.ndarray:
    """Jittered reference pose turned in 3D.

    The yaw/pitch turn makes every joint's depth a function of the body
    orientation, so depth is recoverable from the projected 2D layout but
    only through learned structure, as with real images.
    """
    coords = reference_pose().coords.copy()
    coords += rng.normal(scale=config.jitter_mm, size=coords.shape)
    yaw = np.radians(rng.uniform(config.yaw_range_deg[0], config.yaw_range_deg[1]))
    pitch = np.radians(rng.uniform(-config.max_pitch_deg, config.max_pitch_deg))
    coords = coords @ _yaw_pitch(yaw, pitch).T
    angle = rng.uniform(-config.max_inplane_deg, config.max_inplane_deg)
    coords[:, :2] = coords[:, :2] @ _rot2d(angle).T
    return coords - coords[0]


def _make_split(
    rng: np.random.Generator,
    count: int,
    config: ToyDataConfig,
    skeleton: Skeleton,
    fraction_3d: float,
):
    n, k = skeleton.num_joints, skeleton.num_parts
    d, h, w = config.volume
    hh, hw = config.heatmap
    up = np.array([hw / w, hh / h])

    input_dim = 2 * n + (k if config.include_hints else 0)
    inputs = np.zeros((count, input_dim))
    gt_voxels = np.zeros((count, n, 3))
    valid = np.ones((count, n), dtype=bool)
    hem_maps = np.zeros((count, k, 3, hh, hw))
    hem_mask = np.zeros_like(hem_maps)
    heat2d = np.zeros((count, n, hh, hw))
    num_3d = int(round(count * fraction_3d))
    lambda_flags = np.zeros(count, dtype=np.int64)
    lambda_flags[rng.permutation(count)[:num_3d]] = 1

    for b in range(count):
        coords_mm = _random_pose_mm(rng, config)
        pose_mm = Pose3D(coords=coords_mm)
        vox = _voxelize(coords_mm, config.volume)
        gt_voxels[b] = vox

        obs_xy = vox[:, :2] + rng.normal(scale=config.obs_noise_voxels, size=(n, 2))
        parts_obs = [(obs_xy / max(h, w)).ravel()]
        if config.include_hints:
            hints = part_polarities(pose_mm, skeleton).astype(np.float64)
            if config.hint_flip_probability > 0.0:
                flips = rng.random(k) < config.hint_flip_probability
                hints[flips] = -hints[flips]
            parts_obs.append(hints)
        inputs[b] = np.concatenate(parts_obs)

        pose2d_hm = Pose2D(coords=vox[:, :2] * up)
        polarity = part_polarities(pose_mm, skeleton)
        triplets = encode_from_labels(
            pose2d_hm,
            polarity,
            np.ones(k, dtype=bool),
            skeleton,
            (hh, hw),
            config.sigma_heatmap,
        )
        hem_maps[b] = triplets.maps
        hem_mask[b] = triplets.mask
        heat2d[b] = render_heatmaps_2d(pose2d_hm, (hh, hw), config.sigma_heatmap)

    return ToyDataset(
        inputs=inputs,
        gt_voxels=gt_voxels,
        valid=valid,
        hem_maps=hem_maps,
        hem_mask=hem_mask,
        heat2d=heat2d,
        lambda_flags=lambda_flags,
        volume=config.volume,
        heatmap=config.heatmap,
    )


def make_toy_data(config: ToyDataConfig = ToyDataConfig(), seed: int = 0, skeleton: Skeleton = None):
    """Deterministic (train, val) synthetic datasets for one seed.

    Training mixes full-3D and weakly labeled samples per
    ``config.fraction_3d``; validation is always fully 3D.
    """
    skeleton = skeleton or canonical_skeleton()
    rng = np.random.default_rng(seed)
    train = _make_split(rng, config.num_train, config, skeleton, config.fraction_3d)
    val = _make_split(rng, config.num_val, config, skeleton, 1.0)
    return train, val


@dataclass(frozen=True)
class ToyNetConfig:
    input_dim: int
    num_joints: int = 18
    num_parts: int = 14
    volume: tuple = (8, 8, 8)
    heatmap: tuple = (12, 12)
    hidden_dim: int = 64
    proj_dim: int = 32
    trunk_bypass: bool = True


class ToyRegressor:
    """Fully connected network with auxiliary heatmap heads.

    trunk -> (triplet head, 2D-heatmap head) -> projection -> joined with
    the trunk -> volumetric logits.  The auxiliary predictions always feed
    the final head; whether they receive supervision is the trainer's
    choice, so ablations compare supervision, not architecture.
    """

    PARAM_NAMES = (
        "w1", "b1", "w_hem", "b_hem", "w_2d", "b_2d", "w_proj", "b_proj", "w_out", "b_out",
    )

    def __init__(self, config: ToyNetConfig, params: dict):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ToyNetConfig, seed: int = 0) -> "ToyRegressor":
        rng = np.random.default_rng(seed)
        n, k = config.num_joints, config.num_parts
        hh, hw = config.heatmap
        d, h, w = config.volume
        hem_dim = k * 3 * hh * hw
        h2d_dim = n * hh * hw
        out_dim = n * d * h * w

        def dense(fan_in, fan_out, gain=1.0):
            return rng.normal(scale=gain / np.sqrt(fan_in), size=(fan_in, fan_out))

        params = {
            "w1": dense(config.input_dim, config.hidden_dim),
            "b1": np.zeros(config.hidden_dim),
            "w_hem": dense(config.hidden_dim, hem_dim, gain=0.1),
            "b_hem": np.zeros(hem_dim),
            "w_2d": dense(config.hidden_dim, h2d_dim, gain=0.1),
            "b_2d": np.zeros(h2d_dim),
            "w_proj": dense(hem_dim + h2d_dim, config.proj_dim),
            "b_proj": np.zeros(config.proj_dim),
            "w_out": dense(
                (config.hidden_dim if config.trunk_bypass else 0) + config.proj_dim,
                out_dim,
                gain=0.1,
            ),
            "b_out": np.zeros(out_dim),
        }
        return cls(config, params)

    def param_nodes(self) -> dict:
        return {name: ad.constant(self.params[name], name=name) for name in self.PARAM_NAMES}

    def forward(self, nodes: dict, obs: np.ndarray) -> dict:
        """Build the forward graph for a batch; returns named DiffArrays."""
        cfg = self.config
        batch = obs.shape[0]
        n, k = cfg.num_joints, cfg.num_parts
        hh, hw = cfg.heatmap
        d, h, w = cfg.volume

        x = ad.constant(obs, name="obs")
        hidden = ad.relu(ad.add(ad.matrix_multiply(x, nodes["w1"]), nodes["b1"]))
        hem_flat = ad.add(ad.matrix_multiply(hidden, nodes["w_hem"]), nodes["b_hem"])
        h2d_flat = ad.add(ad.matrix_multiply(hidden, nodes["w_2d"]), nodes["b_2d"])
        aux = ad.concat([hem_flat, h2d_flat], axis=1)
        proj = ad.relu(ad.add(ad.matrix_multiply(aux, nodes["w_proj"]), nodes["b_proj"]))
        joined = ad.concat([hidden, proj], axis=1) if cfg.trunk_bypass else proj
        logits = ad.add(ad.matrix_multiply(joined, nodes["w_out"]), nodes["b_out"])
        volume = ad.reshape(logits, (batch, n, d, h, w))
        probs = ad.softmax_over_axes(volume, axes=(2, 3, 4))
        coords = ad.expectation_over_grid(probs, 3)
        return {
            "hem": ad.reshape(hem_flat, (batch, k, 3, hh, hw)),
            "heat2d": ad.reshape(h2d_flat, (batch, n, hh, hw)),
            "coords": coords,
        }

    def predict_coords(self, obs: np.ndarray) -> np.ndarray:
        """(B, N, 3) voxel coordinates, values only."""
        return self.forward(self.param_nodes(), np.atleast_2d(obs))["coords"].values

    def to_arrays(self) -> dict:
        return dict(self.params)

    @classmethod
    def from_arrays(cls, config: ToyNetConfig, arrays: dict) -> "ToyRegressor":
        return cls(config, {name: np.asarray(arrays[name], dtype=np.float64) for name in cls.PARAM_NAMES})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 0.2
    batch_size: int = 64
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    use_intermediate: bool = True
    hidden_dim: int = 64
    proj_dim: int = 32
    trunk_bypass: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be positive or exactly 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")


def voxel_mpjpe(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray, root: int = 0) -> float:
    """Mean root-aligned joint error in voxels over a batch."""
    p = pred - pred[:, root : root + 1]
    g = gt - gt[:, root : root + 1]
    err = np.linalg.norm(p - g, axis=2)
    return float(err[valid].mean())


def train_toy(train_set: ToyDataset, val_set: ToyDataset, config: TrainConfig = TrainConfig()):
    """Stochastic-gradient training; returns (model, per-epoch log).

    The log rows carry the loss breakdown (per-sample means) plus train and
    validation voxel-MPJPE.  Raises TrainingDivergedError (with the last
    finite parameter snapshot attached) when the loss stops being finite.
    """
    skeleton = canonical_skeleton()
    net_config = ToyNetConfig(
        input_dim=train_set.inputs.shape[1],
        num_joints=train_set.gt_voxels.shape[1],
        num_parts=train_set.hem_maps.shape[1],
        volume=train_set.volume,
        heatmap=train_set.heatmap,
        hidden_dim=config.hidden_dim,
        proj_dim=config.proj_dim,
        trunk_bypass=config.trunk_bypass,
    )
    model = ToyRegressor.init(net_config, seed=config.seed)
    nodes = model.param_nodes()
    order_rng = np.random.default_rng(config.seed + 1)

    coord_weights = np.repeat(
        train_set.valid[:, :, None], 3, axis=2
    ).astype(np.float64)
    coord_weights[:, :, 2] *= train_set.lambda_flags[:, None]

    log = []
    last_finite = {name: node.values.copy() for name, node in nodes.items()}
    for epoch in range(config.epochs):
        order = order_rng.permutation(train_set.size)
        epoch_losses = np.zeros(3)  # hem, 2d, 3d sums over samples
        for start in range(0, train_set.size, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = idx.size
            out = model.forward(nodes, train_set.inputs[idx])

            hem_res = ad.multiply(
                ad.sub(out["hem"], ad.constant(train_set.hem_maps[idx])),
                ad.constant(train_set.hem_mask[idx]),
            )
            l_hem = ad.square_sum(hem_res)
            l_2d = ad.square_sum(ad.sub(out["heat2d"], ad.constant(train_set.heat2d[idx])))
            coord_res = ad.multiply(
                ad.sub(out["coords"], ad.constant(train_set.gt_voxels[idx])),
                ad.constant(coord_weights[idx]),
            )
            l_3d = ad.abs_sum(coord_res)
            if config.use_intermediate:
                l_int = ad.add(l_hem, l_2d)
                objective = ad.add(ad.multiply(ad.constant(config.alpha), l_int), l_3d)
            else:
                objective = l_3d

            if not np.isfinite(objective.values):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", last_state=last_finite
                )
            ad.backward(objective)
            if config.learning_rate != 0.0:
                for node in nodes.values():
                    node.values -= config.learning_rate * node.grad / batch
            epoch_losses += np.array(
                [float(l_hem.values), float(l_2d.values), float(l_3d.values)]
            )
            last_finite = {name: node.values.copy() for name, node in nodes.items()}

        model.params = {name: node.values for name, node in nodes.items()}
        mean = epoch_losses / train_set.size
        breakdown = LossBreakdown.from_components(
            l_hem=mean[0],
            l_2d=mean[1],
            l_3d=mean[2],
            lambda_flag=int(train_set.lambda_flags.max(initial=0)),
            alpha=config.alpha,
        )
        train_mpjpe = voxel_mpjpe(
            model.predict_coords(train_set.inputs), train_set.gt_voxels, train_set.valid,
            skeleton.root_index,
        )
        val_mpjpe = voxel_mpjpe(
            model.predict_coords(val_set.inputs), val_set.gt_voxels, val_set.valid,
            skeleton.root_index,
        )
        row = {"epoch": epoch} | breakdown.to_json_dict() | {
            "train_voxel_mpjpe": train_mpjpe,
            "val_voxel_mpjpe": val_mpjpe,
        }
        log.append(row)
    model.params = {name: node.values for name, node in nodes.items()}
    return model, log
