import json
import os

import numpy as np
import pytest

from triheat import container as cont
from triheat.annotations import poses_to_jsonl, fbi_from_jsonl, ordinal_to_jsonl, OrdinalAnnotationSet, OrdinalRecord, CLOSER
from triheat.cli import main, rig_to_container
from triheat.bodymodel import make_mini_rig
from triheat.skeleton import Pose2D, Pose3D, canonical_skeleton

from conftest import random_pose_mm


@pytest.fixture
def pose_file(tmp_path):
    rng = np.random.default_rng(0)
    poses = [random_pose_mm(rng) for _ in range(4)]
    path = tmp_path / "poses.jsonl"
    path.write_text(poses_to_jsonl(poses, groups=["walk", "walk", "sit", "sit"]))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestEncodeDecode:
    def test_encode_writes_container(self, tmp_path, pose_file, capsys):
        out = tmp_path / "targets.thc"
        code, stdout, _ = run(capsys, "encode", "--poses", pose_file, "--out", out,
                              "--grid", 32, "--volume-depth", 4)
        assert code == 0
        assert "polarity histogram" in stdout
        arrays, meta = cont.read_file(out)
        assert arrays["triplets"].shape == (4, 14, 3, 32, 32)
        assert arrays["heatmaps2d"].shape == (4, 18, 32, 32)
        assert arrays["volumetric"].shape == (4, 18, 4, 32, 32)
        assert meta["grid"] == 32

    def test_encode_deterministic_bytes(self, tmp_path, pose_file, capsys):
        a = tmp_path / "a.thc"
        b = tmp_path / "b.thc"
        assert run(capsys, "encode", "--poses", pose_file, "--out", a, "--grid", 32, "--volume-depth", 4)[0] == 0
        assert run(capsys, "encode", "--poses", pose_file, "--out", b, "--grid", 32, "--volume-depth", 4)[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_encode_empty_file_exit_2(self, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        code, _, err = run(capsys, "encode", "--poses", empty, "--out", tmp_path / "x.thc")
        assert code == 2

    def test_encode_missing_file_exit_2(self, tmp_path, capsys):
        code, _, _ = run(capsys, "encode", "--poses", tmp_path / "nope.jsonl",
                         "--out", tmp_path / "x.thc")
        assert code == 2

    def test_decode_round_trip(self, tmp_path, pose_file, capsys):
        out = tmp_path / "targets.thc"
        run(capsys, "encode", "--poses", pose_file, "--out", out, "--grid", 32, "--volume-depth", 4)
        code, stdout, _ = run(capsys, "decode", "--container", out, "--json")
        assert code == 0
        doc = json.loads(stdout)
        assert len(doc["polarities"]) == 4
        for states in doc["polarities"].values():
            assert len(states) == 14
            assert all(s in ("-1", "0", "1", "?") for s in states)

    def test_decode_bad_container_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.thc"
        bad.write_bytes(b"garbage")
        code, _, _ = run(capsys, "decode", "--container", bad)
        assert code == 2


class TestEval:
    def test_perfect_prediction(self, tmp_path, pose_file, capsys):
        code, stdout, _ = run(capsys, "eval", "--pred", pose_file, "--gt", pose_file, "--json")
        assert code == 0
        doc = json.loads(stdout)
        assert doc["overall"]["mpjpe_mm"] == pytest.approx(0.0, abs=1e-9)
        assert doc["overall"]["pck_percent"] == 100.0

    def test_translation_invariance_and_groups(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        poses = [random_pose_mm(rng) for _ in range(4)]
        moved = [Pose3D(coords=p.coords + np.array([50.0, 60.0, -70.0])) for p in poses]
        gt = tmp_path / "gt.jsonl"
        pred = tmp_path / "pred.jsonl"
        gt.write_text(poses_to_jsonl(poses, groups=["a", "a", "b", "b"]))
        pred.write_text(poses_to_jsonl(moved, groups=["a", "a", "b", "b"]))
        code, stdout, _ = run(capsys, "eval", "--pred", pred, "--gt", gt, "--by-group", "--json")
        assert code == 0
        doc = json.loads(stdout)
        assert doc["overall"]["mpjpe_mm"] == pytest.approx(0.0, abs=1e-9)
        assert set(doc["groups"]) == {"a", "b"}

    def test_rotated_gt_pa_zero(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        poses = [random_pose_mm(rng) for _ in range(2)]
        angle = 0.7
        rot = np.array(
            [
                [np.cos(angle), -np.sin(angle), 0.0],
                [np.sin(angle), np.cos(angle), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        turned = [Pose3D(coords=p.coords @ rot.T) for p in poses]
        gt = tmp_path / "gt.jsonl"
        pred = tmp_path / "pred.jsonl"
        gt.write_text(poses_to_jsonl(poses))
        pred.write_text(poses_to_jsonl(turned))
        code, stdout, _ = run(capsys, "eval", "--pred", pred, "--gt", gt, "--json")
        doc = json.loads(stdout)
        assert doc["overall"]["pa_mpjpe_mm"] == pytest.approx(0.0, abs=1e-6)
        assert doc["overall"]["mpjpe_mm"] > 1.0

    def test_mismatched_counts_exit_2(self, tmp_path, pose_file, capsys):
        rng = np.random.default_rng(3)
        other = tmp_path / "other.jsonl"
        other.write_text(poses_to_jsonl([random_pose_mm(rng)]))
        code, _, _ = run(capsys, "eval", "--pred", pose_file, "--gt", other)
        assert code == 2


class TestTrainToy:
    def test_deterministic_and_logged(self, tmp_path, capsys):
        args = [
            "train-toy", "--epochs", 2, "--num-train", 32, "--num-val", 16,
            "--seed", 5, "--log", tmp_path / "log1.jsonl", "--out", tmp_path / "m1.thc",
        ]
        assert run(capsys, *args)[0] == 0
        args2 = [
            "train-toy", "--epochs", 2, "--num-train", 32, "--num-val", 16,
            "--seed", 5, "--log", tmp_path / "log2.jsonl", "--out", tmp_path / "m2.thc",
        ]
        assert run(capsys, *args2)[0] == 0
        assert (tmp_path / "m1.thc").read_bytes() == (tmp_path / "m2.thc").read_bytes()
        assert (tmp_path / "log1.jsonl").read_text() == (tmp_path / "log2.jsonl").read_text()
        rows = [json.loads(l) for l in (tmp_path / "log1.jsonl").read_text().splitlines()]
        assert len(rows) == 2
        assert {"l_hem", "l_2d", "l_3d", "l_tot", "val_voxel_mpjpe"} <= set(rows[0])

    def test_alpha_changes_l_tot_trace(self, tmp_path, capsys):
        base = ["train-toy", "--epochs", 2, "--num-train", 32, "--num-val", 16, "--seed", 5]
        run(capsys, *base, "--alpha", 0.05, "--log", tmp_path / "a.jsonl", "--out", tmp_path / "a.thc")
        run(capsys, *base, "--alpha", 0.0, "--log", tmp_path / "b.jsonl", "--out", tmp_path / "b.thc")
        rows_a = [json.loads(l)["l_tot"] for l in (tmp_path / "a.jsonl").read_text().splitlines()]
        rows_b = [json.loads(l)["l_tot"] for l in (tmp_path / "b.jsonl").read_text().splitlines()]
        assert rows_a != rows_b

    def test_negative_learning_rate_exit_2(self, tmp_path, capsys):
        code, _, err = run(
            capsys, "train-toy", "--epochs", 1, "--learning-rate", -0.1,
            "--log", tmp_path / "l.jsonl", "--out", tmp_path / "m.thc",
        )
        assert code == 2

    def test_zero_learning_rate_flat(self, tmp_path, capsys):
        code, _, _ = run(
            capsys, "train-toy", "--epochs", 3, "--learning-rate", 0.0,
            "--num-train", 32, "--num-val", 16,
            "--log", tmp_path / "l.jsonl", "--out", tmp_path / "m.thc",
        )
        assert code == 0
        rows = [json.loads(l) for l in (tmp_path / "l.jsonl").read_text().splitlines()]
        assert rows[0]["l_tot"] == rows[-1]["l_tot"]

    def test_env_seed_override(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("TRIHEAT_SEED", "5")
        args = [
            "train-toy", "--epochs", 1, "--num-train", 32, "--num-val", 16,
            "--seed", 99, "--log", tmp_path / "le.jsonl", "--out", tmp_path / "me.thc",
        ]
        assert run(capsys, *args)[0] == 0
        monkeypatch.delenv("TRIHEAT_SEED")
        args2 = [
            "train-toy", "--epochs", 1, "--num-train", 32, "--num-val", 16,
            "--seed", 5, "--log", tmp_path / "l5.jsonl", "--out", tmp_path / "m5.thc",
        ]
        assert run(capsys, *args2)[0] == 0
        assert (tmp_path / "me.thc").read_bytes() == (tmp_path / "m5.thc").read_bytes()


class TestSimulateConvert:
    def test_simulate_writes_fbi(self, tmp_path, pose_file, capsys):
        out = tmp_path / "fbi.jsonl"
        code, stdout, _ = run(capsys, "simulate-fbi", "--poses", pose_file, "--out", out, "--seed", 3)
        assert code == 0
        fbi = fbi_from_jsonl(out.read_text())
        assert len(fbi) == 4

    def test_convert_ordinal(self, tmp_path, capsys):
        skeleton = canonical_skeleton()
        p, c = skeleton.parts[0]
        rec = OrdinalRecord(
            "img", Pose2D(coords=np.zeros((18, 2))), ((p, c, CLOSER),)
        )
        src = tmp_path / "ordinal.jsonl"
        src.write_text(ordinal_to_jsonl(OrdinalAnnotationSet((rec,))))
        out = tmp_path / "fbi.jsonl"
        code, _, _ = run(capsys, "convert-ordinal", "--ordinal", src, "--out", out)
        assert code == 0
        fbi = fbi_from_jsonl(out.read_text())
        assert fbi.records[0].labels[0] == "backward"


class TestDumpSkin:
    def test_dump_images_and_objs(self, tmp_path, pose_file, capsys):
        container = tmp_path / "targets.thc"
        run(capsys, "encode", "--poses", pose_file, "--out", container, "--grid", 16, "--volume-depth", 4)
        out_dir = tmp_path / "dump"
        code, stdout, _ = run(capsys, "dump", "--container", container, "--out-dir", out_dir)
        assert code == 0
        names = sorted(os.listdir(out_dir))
        assert "pose0000_part00_neg.png" in names
        assert "pose0000_joint00.png" in names
        assert "pose0000.obj" in names

    def test_dump_deterministic(self, tmp_path, pose_file, capsys):
        container = tmp_path / "targets.thc"
        run(capsys, "encode", "--poses", pose_file, "--out", container, "--grid", 16, "--volume-depth", 4)
        d1, d2 = tmp_path / "d1", tmp_path / "d2"
        run(capsys, "dump", "--container", container, "--out-dir", d1)
        run(capsys, "dump", "--container", container, "--out-dir", d2)
        for name in os.listdir(d1):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_skin_default_rig(self, tmp_path, capsys):
        out = tmp_path / "mesh.obj"
        code, stdout, _ = run(capsys, "skin", "--out", out)
        assert code == 0
        text = out.read_text()
        assert text.startswith("v ")
        assert "\nf " in text

    def test_skin_with_params_and_rig_container(self, tmp_path, capsys):
        rig_path = tmp_path / "rig.thc"
        rig_to_container(rig_path, make_mini_rig())
        params = {"beta": [0.0] * 10, "theta": [[0.0, 0.0, 0.0]] * 24}
        params_path = tmp_path / "params.json"
        params_path.write_text(json.dumps(params))
        out = tmp_path / "mesh.obj"
        code, _, _ = run(capsys, "skin", "--params", params_path, "--rig", rig_path, "--out", out)
        assert code == 0

    def test_skin_bad_params_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"beta": [1, 2]}')
        code, _, _ = run(capsys, "skin", "--params", bad, "--out", tmp_path / "m.obj")
        assert code == 2


class TestConfigPrecedence:
    def test_flag_beats_config_beats_default(self, tmp_path, pose_file, capsys):
        config = tmp_path / "conf.json"
        config.write_text(json.dumps({"grid": 16, "volume_depth": 4}))
        out = tmp_path / "t.thc"
        # config file overrides the built-in 64 default
        run(capsys, "encode", "--poses", pose_file, "--out", out, "--config", config)
        arrays, meta = cont.read_file(out)
        assert meta["grid"] == 16
        # explicit flag beats the config file
        run(capsys, "encode", "--poses", pose_file, "--out", out, "--config", config, "--grid", 24)
        arrays, meta = cont.read_file(out)
        assert meta["grid"] == 24

    def test_topology_subcommand(self, capsys):
        code, stdout, _ = run(capsys, "topology")
        assert code == 0
        doc = json.loads(stdout)
        assert doc["schema"] == "triheat.skeleton/1"
        assert len(doc["joints"]) == 18
