import numpy as np
import pytest

from triheat.errors import ConfigError, DimensionError
from triheat.heatmaps import HeatmapTriplets
from triheat.losses import (
    DEFAULT_ALPHA,
    LossBreakdown,
    heatmap2d_loss,
    hemlets_loss,
    intermediate_loss,
    joint3d_loss,
    mesh_loss,
    smpl_pose_loss,
    smpl_shape_loss,
    total_loss,
)
from triheat.skeleton import Pose3D


def _triplets(maps, mask=None):
    return HeatmapTriplets(maps=maps, mask=np.ones_like(maps) if mask is None else mask)


class TestHemletsLoss:
    def test_zero_when_equal(self):
        rng = np.random.default_rng(0)
        maps = rng.random((14, 3, 8, 8))
        gt = _triplets(maps)
        assert hemlets_loss(maps, gt) == 0.0

    def test_full_mask_kills_loss(self):
        rng = np.random.default_rng(1)
        gt = _triplets(rng.random((14, 3, 8, 8)), np.zeros((14, 3, 8, 8)))
        pred = rng.random((14, 3, 8, 8))
        assert hemlets_loss(pred, gt) == 0.0

    def test_single_pixel(self):
        maps = np.zeros((1, 3, 4, 4))
        mask = np.zeros_like(maps)
        gt_maps = maps.copy()
        gt_maps[0, 1, 2, 2] = 1.0
        mask[0, 1, 2, 2] = 1.0
        assert hemlets_loss(maps, _triplets(gt_maps, mask)) == pytest.approx(1.0)

    def test_quadratic_scaling(self):
        rng = np.random.default_rng(2)
        gt = _triplets(rng.random((2, 3, 6, 6)))
        residual = rng.normal(size=(2, 3, 6, 6))
        l1 = hemlets_loss(gt.maps + residual, gt)
        l3 = hemlets_loss(gt.maps + 3.0 * residual, gt)
        assert l3 == pytest.approx(9.0 * l1, rel=1e-12)

    def test_shape_mismatch(self):
        gt = _triplets(np.zeros((2, 3, 4, 4)))
        with pytest.raises(DimensionError):
            hemlets_loss(np.zeros((2, 3, 5, 5)), gt)

    def test_normalize_flag(self):
        gt = _triplets(np.ones((1, 3, 2, 2)))
        loss = hemlets_loss(np.zeros((1, 3, 2, 2)), gt, normalize=True)
        assert loss == pytest.approx(1.0)


class TestHeatmap2DLoss:
    def test_identical(self):
        stack = np.random.default_rng(3).random((18, 8, 8))
        assert heatmap2d_loss(stack, stack) == 0.0

    def test_single_offset(self):
        gt = np.zeros((2, 4, 4))
        pred = gt.copy()
        pred[1, 0, 0] = 2.0
        assert heatmap2d_loss(pred, gt) == pytest.approx(4.0)

    def test_quadratic(self):
        rng = np.random.default_rng(4)
        gt = rng.random((3, 5, 5))
        r = rng.normal(size=(3, 5, 5))
        assert heatmap2d_loss(gt + 2 * r, gt) == pytest.approx(4 * heatmap2d_loss(gt + r, gt), rel=1e-12)


class TestJoint3DLoss:
    def test_zero_when_equal(self):
        rng = np.random.default_rng(5)
        coords = rng.normal(size=(18, 3))
        pose = Pose3D(coords=coords)
        assert joint3d_loss(pose, pose, lam=1) == 0.0

    def test_lambda_zero_ignores_depth(self):
        rng = np.random.default_rng(6)
        coords = rng.normal(size=(18, 3))
        pred = coords.copy()
        pred[:, 2] += rng.normal(size=18) * 100
        assert joint3d_loss(Pose3D(coords=pred), Pose3D(coords=coords), lam=0) == 0.0

    def test_l1_sum(self):
        gt = np.zeros((18, 3))
        pred = gt.copy()
        pred[4] = [1.0, 2.0, 3.0]
        assert joint3d_loss(Pose3D(coords=pred), Pose3D(coords=gt), lam=1) == pytest.approx(6.0)
        assert joint3d_loss(Pose3D(coords=pred), Pose3D(coords=gt), lam=0) == pytest.approx(3.0)

    def test_invalid_joints_skipped(self):
        gt = np.zeros((18, 3))
        pred = np.ones((18, 3))
        valid = np.zeros(18, dtype=bool)
        valid[0] = True
        loss = joint3d_loss(Pose3D(coords=pred), Pose3D(coords=gt, valid=valid), lam=1)
        assert loss == pytest.approx(3.0)

    def test_lambda_decomposition(self):
        rng = np.random.default_rng(7)
        gt = Pose3D(coords=rng.normal(size=(18, 3)))
        pred = Pose3D(coords=rng.normal(size=(18, 3)))
        z_term = np.abs(pred.coords[:, 2] - gt.coords[:, 2]).sum()
        assert joint3d_loss(pred, gt, 1) == pytest.approx(joint3d_loss(pred, gt, 0) + z_term)

    def test_gate_validation(self):
        pose = Pose3D(coords=np.zeros((18, 3)))
        with pytest.raises(ConfigError):
            joint3d_loss(pose, pose, lam=2)


class TestTotalLoss:
    def test_paper_constants(self):
        assert total_loss(10.0, 1.0) == pytest.approx(1.5)
        assert DEFAULT_ALPHA == 0.05

    def test_alpha_zero(self):
        assert total_loss(100.0, 7.0, alpha=0.0) == 7.0

    def test_zero_intermediate(self):
        assert total_loss(0.0, 7.0) == 7.0


class TestBodyLosses:
    def test_pose_loss_identical(self):
        rots = np.stack([np.eye(3)] * 24)
        assert smpl_pose_loss(rots, rots) == 0.0

    def test_pose_loss_half_turn(self):
        gt = np.stack([np.eye(3)] * 24)
        pred = gt.copy()
        pred[5] = np.diag([1.0, -1.0, -1.0])
        assert smpl_pose_loss(pred, gt) == pytest.approx(4.0)

    def test_pose_loss_sum_symmetry(self):
        rng = np.random.default_rng(8)
        gt = rng.normal(size=(24, 3, 3))
        pred = rng.normal(size=(24, 3, 3))
        base = smpl_pose_loss(pred, gt)
        swapped = pred.copy()
        swapped[[2, 9]] = pred[[9, 2]]
        gt_swapped = gt.copy()
        gt_swapped[[2, 9]] = gt[[9, 2]]
        assert smpl_pose_loss(swapped, gt_swapped) == pytest.approx(base)

    def test_pose_loss_frobenius_option(self):
        gt = np.stack([np.eye(3)] * 24)
        pred = gt.copy()
        pred[0] = np.diag([1.0, -1.0, -1.0])
        assert smpl_pose_loss(pred, gt, norm="frobenius") == pytest.approx(np.sqrt(8.0))

    def test_shape_loss(self):
        gt = np.zeros(10)
        assert smpl_shape_loss(gt, gt) == 0.0
        one = gt.copy()
        one[3] = 1.0
        assert smpl_shape_loss(one, gt) == pytest.approx(1.0)
        assert smpl_shape_loss(gt + 0.5, gt) == pytest.approx(5.0)

    def test_mesh_loss(self):
        assert mesh_loss(0.0, 0.0, 3.0) == 3.0
        assert mesh_loss(1.0, 2.0, 3.0) == 6.0
        assert mesh_loss(1.5, 2.0, 3.0) > mesh_loss(1.0, 2.0, 3.0)


class TestBreakdownAlgebra:
    def test_identities_random(self):
        rng = np.random.default_rng(9)
        for _ in range(500):
            l_hem, l_2d, l_3d = rng.random(3) * 100
            b = LossBreakdown.from_components(l_hem, l_2d, l_3d)
            assert abs(b.l_int - (b.l_hem + b.l_2d)) <= 1e-12
            assert abs(b.l_tot - (DEFAULT_ALPHA * b.l_int + b.l_3d)) <= 1e-12

    def test_mesh_identity(self):
        b = LossBreakdown.from_components(1.0, 2.0, 3.0, l_theta=4.0, l_beta=5.0)
        assert b.l_mesh == pytest.approx(b.l_theta + b.l_beta + b.l_tot, abs=1e-12)

    def test_intermediate_sum(self):
        assert intermediate_loss(2.0, 3.0) == 5.0
