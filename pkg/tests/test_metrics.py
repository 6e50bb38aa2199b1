import numpy as np
import pytest

from triheat.errors import (
    AlignmentDegenerateError,
    ConfigError,
    EmptyEvaluationError,
)
from triheat.metrics import (
    auc,
    evaluate_pair,
    hip_aligned_errors,
    mpjpe,
    pa_mpjpe,
    pck3d,
    procrustes_align,
)
from triheat.skeleton import Pose3D, reference_pose

from conftest import random_pose_mm


def _rotation(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s, t = np.cos(angle), np.sin(angle), 1 - np.cos(angle)
    return np.array(
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    )


class TestMpjpe:
    def test_zero_for_identical(self):
        pose = reference_pose()
        assert mpjpe(pose, pose) == 0.0

    def test_translation_cancels(self):
        pose = reference_pose()
        moved = Pose3D(coords=pose.coords + np.array([100.0, -50.0, 30.0]))
        assert mpjpe(moved, pose) == pytest.approx(0.0, abs=1e-9)

    def test_constant_displacement(self):
        # 10mm per joint in arbitrary directions; the root is pinned by the
        # alignment and excluded from the mean
        pose = reference_pose()
        rng = np.random.default_rng(0)
        direction = rng.normal(size=(18, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        direction[0] = 0.0
        moved = Pose3D(coords=pose.coords + 10.0 * direction)
        assert mpjpe(moved, pose) == pytest.approx(10.0)

    def test_no_jointly_valid(self):
        pose = reference_pose()
        valid = np.zeros(18, dtype=bool)
        valid[0] = True  # only the root overlaps: nothing left to average
        masked = Pose3D(coords=pose.coords, valid=valid)
        with pytest.raises(EmptyEvaluationError):
            mpjpe(masked, masked)


class TestPaMpjpe:
    def test_similarity_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pose = random_pose_mm(rng)
            rot = _rotation(rng.normal(size=3), rng.uniform(0, 2 * np.pi))
            scale = rng.uniform(0.2, 5.0)
            shift = rng.normal(size=3) * 500
            moved = Pose3D(coords=scale * pose.coords @ rot.T + shift)
            assert pa_mpjpe(moved, pose) < 1e-9

    def test_not_above_mpjpe(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            gt = random_pose_mm(rng)
            pred = Pose3D(coords=gt.coords + rng.normal(scale=60.0, size=(18, 3)))
            assert pa_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9

    def test_rigid_only_mode(self):
        rng = np.random.default_rng(3)
        pose = random_pose_mm(rng)
        doubled = Pose3D(coords=2.0 * pose.coords)
        assert pa_mpjpe(doubled, pose) < 1e-9
        assert pa_mpjpe(doubled, pose, with_scale=False) > 1.0

    def test_collinear_degenerate(self):
        coords = np.zeros((18, 3))
        coords[:, 0] = np.arange(18.0)
        pose = Pose3D(coords=coords)
        with pytest.raises(AlignmentDegenerateError):
            pa_mpjpe(pose, pose)

    def test_planar_case_matches_rotation_grid_oracle(self):
        # oracle: exhaustive in-plane rotation search (0.1 degree steps,
        # including the in-plane flip family) with closed-form scale and
        # translation per candidate
        rng = np.random.default_rng(4)
        gt = np.array([[0.0, 0.0, 0.0], [400.0, 0.0, 0.0], [400.0, 300.0, 0.0], [0.0, 300.0, 0.0]])
        pred = gt @ _rotation([0, 0, 1], 0.7).T * 1.3 + rng.normal(scale=20.0, size=(4, 3))
        pred[:, 2] = 0.0

        def oracle():
            # brute-forces the same least-squares objective the closed form
            # solves, then reports the aligned mean joint error
            best_sq, best_err = np.inf, np.inf
            flip = np.diag([1.0, -1.0, -1.0])
            for step in range(3600):
                base = _rotation([0, 0, 1], np.radians(step * 0.1))
                for rot in (base, base @ flip):
                    rotated = pred @ rot.T
                    mu_r, mu_g = rotated.mean(axis=0), gt.mean(axis=0)
                    rc, gc = rotated - mu_r, gt - mu_g
                    scale = (rc * gc).sum() / (rc * rc).sum()
                    sq = ((scale * rc - gc) ** 2).sum()
                    if sq < best_sq:
                        best_sq = sq
                        best_err = np.linalg.norm(scale * rc - gc, axis=1).mean()
            return best_err

        valid = np.zeros(18, dtype=bool)
        valid[:4] = True
        coords_p = np.zeros((18, 3))
        coords_p[:4] = pred
        coords_g = np.zeros((18, 3))
        coords_g[:4] = gt
        ours = pa_mpjpe(Pose3D(coords=coords_p, valid=valid), Pose3D(coords=coords_g, valid=valid))
        assert ours == pytest.approx(oracle(), abs=0.01)

    def test_reflection_not_used(self):
        # procrustes_align must return a proper rotation even when a
        # reflection would fit better
        rng = np.random.default_rng(5)
        source = rng.normal(size=(10, 3))
        target = source.copy()
        target[:, 2] = -target[:, 2]
        scale, rot, t = procrustes_align(source, target)
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-9)


class TestPck:
    def test_all_zero_errors(self):
        pose = reference_pose()
        assert pck3d(pose, pose) == 100.0

    def test_half_beyond_threshold(self):
        pose = reference_pose()
        moved = pose.coords.copy()
        moved[1:10] += np.array([200.0, 0.0, 0.0])  # 9 of 17 counted joints
        pred = Pose3D(coords=moved)
        assert pck3d(pred, pose, threshold_mm=150.0) == pytest.approx(100.0 * 8 / 17)

    def test_boundary_strict(self):
        pose = reference_pose()
        coords = pose.coords.copy()
        coords[1:] += np.array([150.0, 0.0, 0.0])
        pred = Pose3D(coords=coords)
        # every counted joint sits exactly on the threshold: strict < gives 0
        assert pck3d(pred, pose, threshold_mm=150.0) == 0.0

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(6)
        gt = random_pose_mm(rng)
        pred = Pose3D(coords=gt.coords + rng.normal(scale=100.0, size=(18, 3)))
        values = [pck3d(pred, gt, t) for t in np.linspace(1.0, 400.0, 40)]
        assert all(b >= a for a, b in zip(values, values[1:]))


class TestAuc:
    def test_zero_error_pose(self):
        pose = reference_pose()
        assert auc(pose, pose) == pytest.approx(100.0)

    def test_constant_error_matches_sweep_oracle(self):
        rng = np.random.default_rng(7)
        pose = reference_pose()
        for error in (10.0, 75.0, 149.0, 151.0):
            direction = rng.normal(size=(18, 3))
            direction /= np.linalg.norm(direction, axis=1, keepdims=True)
            direction[0] = 0.0
            pred = Pose3D(coords=pose.coords + error * direction)
            # independent oracle: constant error -> fraction of sweep
            # thresholds strictly above the error
            thresholds = 150.0 * np.arange(1, 32) / 31
            expected = 100.0 * np.mean(thresholds > error)
            assert auc(pred, pose) == pytest.approx(expected, abs=1e-9)

    def test_huge_errors_give_zero(self):
        pose = reference_pose()
        pred = Pose3D(coords=pose.coords + np.array([1e7, 0.0, 0.0]) * np.arange(1, 19)[:, None])
        assert auc(pred, pose) == pytest.approx(0.0, abs=1e-12)

    def test_steps_validation(self):
        pose = reference_pose()
        with pytest.raises(ConfigError):
            auc(pose, pose, steps=1)

    def test_between_min_and_max_pck(self):
        rng = np.random.default_rng(8)
        gt = random_pose_mm(rng)
        pred = Pose3D(coords=gt.coords + rng.normal(scale=80.0, size=(18, 3)))
        sweep = [pck3d(pred, gt, t) for t in 150.0 * np.arange(1, 32) / 31]
        value = auc(pred, gt)
        assert min(sweep) <= value <= max(sweep)


class TestJointRelabelingSymmetry:
    def test_consistent_permutation_invariance(self):
        # metrics ignore joint identity as long as both poses are permuted
        # the same way and the root index is tracked
        rng = np.random.default_rng(9)
        gt = random_pose_mm(rng)
        pred = Pose3D(coords=gt.coords + rng.normal(scale=50.0, size=(18, 3)))
        perm = rng.permutation(18)
        root_new = int(np.where(perm == 0)[0][0])

        from triheat.skeleton import Skeleton, canonical_skeleton

        base = canonical_skeleton()
        inverse = np.argsort(perm)
        relabeled = Skeleton(
            joints=tuple(base.joints[j] for j in perm),
            parts=tuple((int(inverse[p]), int(inverse[c])) for p, c in base.parts),
            root_index=root_new,
            mirror_pairs=tuple(
                (int(inverse[a]), int(inverse[b])) for a, b in base.mirror_pairs
            ),
        )
        a = mpjpe(pred, gt)
        b = mpjpe(
            Pose3D(coords=pred.coords[perm]),
            Pose3D(coords=gt.coords[perm]),
            relabeled,
        )
        assert b == pytest.approx(a, abs=1e-9)
        assert pa_mpjpe(
            Pose3D(coords=pred.coords[perm]), Pose3D(coords=gt.coords[perm])
        ) == pytest.approx(pa_mpjpe(pred, gt), abs=1e-9)


class TestEvalReport:
    def test_fields_consistent(self):
        rng = np.random.default_rng(10)
        gt = random_pose_mm(rng)
        pred = Pose3D(coords=gt.coords + rng.normal(scale=40.0, size=(18, 3)))
        report = evaluate_pair(pred, gt)
        assert report.mpjpe_mm == pytest.approx(mpjpe(pred, gt))
        assert report.pa_mpjpe_mm <= report.mpjpe_mm + 1e-9
        assert 0.0 <= report.pck_percent <= 100.0
        assert 0.0 <= report.auc_percent <= 100.0
        assert report.per_joint_errors.shape == (18,)
        doc = report.to_json_dict()
        assert doc["alignment"] == "hip"
