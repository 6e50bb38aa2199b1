"""Command-line entry point.

Subcommands: encode, decode, train-toy, eval, simulate-fbi, convert-ordinal,
dump, skin.  Exit codes: 0 success, 2 input/config error, 3 numerical
failure, 4 I/O failure.  Configuration precedence is flags > --config file >
built-in defaults; TRIHEAT_SEED overrides any seed and TRIHEAT_THREADS caps
BLAS threads (single-threaded runs are byte-reproducible).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import annotations as anno
from . import container as cont
from . import heatmaps as hm
from . import metrics as mt
from . import toytrain as tt
from .bodymodel import (
    BodyParams,
    BodyMesh,
    make_mini_rig,
    mesh_to_obj,
    RigTemplate,
    skin,
    stick_figure_obj,
)
from .errors import ConfigError, FormatError, TriheatError, TrainingDivergedError
from .integral import SoftArgmaxConfig, soft_argmax_3d
from .losses import DEFAULT_ALPHA
from .skeleton import Pose2D, Pose3D, canonical_skeleton, topology_to_json

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

DEFAULTS = {
    "grid": 64,
    "sigma": hm.DEFAULT_SIGMA,
    "volume_depth": 8,
    "alpha": DEFAULT_ALPHA,
    "seed": 0,
    "threshold": mt.DEFAULT_PCK_THRESHOLD_MM,
    "auc_steps": mt.DEFAULT_AUC_STEPS,
    "epochs": 60,
    "learning_rate": 0.2,
    "batch_size": 64,
    "num_train": 192,
    "num_val": 64,
    "obs_noise": 0.6,
    "data_seed": 100,
}


def _limit_threads():
    want = os.environ.get("TRIHEAT_THREADS")
    if not want:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(int(want))
    except (ImportError, ValueError):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(want)


def _load_config(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("config file must hold a JSON object")
    return doc


def _resolve(args, config, key):
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return DEFAULTS[key]


def _seed(args, config):
    env = os.environ.get("TRIHEAT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"TRIHEAT_SEED must be an integer, got {env!r}") from exc
    return int(_resolve(args, config, "seed"))


def _read_text(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _fit_frame_2d(poses3d, grid, margin):
    """Per-file affine mapping valid (x, y) into the grid with a margin."""
    pts = np.concatenate([p.coords[p.valid][:, :2] for p in poses3d], axis=0)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    scale = (grid - 1 - 2 * margin) / span
    center_src = (lo + hi) / 2.0
    center_dst = np.array([(grid - 1) / 2.0, (grid - 1) / 2.0])
    return scale, center_src, center_dst


def _fit_depth(poses3d, depth, margin):
    zs = np.concatenate([p.coords[p.valid][:, 2] for p in poses3d])
    lo, hi = float(zs.min()), float(zs.max())
    span = max(hi - lo, 1e-9)
    scale = (depth - 1 - 2 * margin) / span
    return scale, lo


def cmd_encode(args, config):
    text = _read_text(args.poses)
    poses3d, poses2d, ids, _groups = anno.poses_from_jsonl(text)
    if not poses3d:
        raise FormatError("pose file holds no records", line=2)
    skeleton = canonical_skeleton()
    grid = int(_resolve(args, config, "grid"))
    sigma = float(_resolve(args, config, "sigma"))
    depth = int(_resolve(args, config, "volume_depth"))
    margin = 2.0 * sigma

    scale2d, c_src, c_dst = _fit_frame_2d(poses3d, grid, margin)
    zscale, zlo = _fit_depth(poses3d, depth, 1.0)

    triplets_all, masks_all, heat2d_all, vol_all = [], [], [], []
    hist = {-1: 0, 0: 0, +1: 0, "masked": 0}
    coords3d_all, valid_all = [], []
    for pose3d, pose2d in zip(poses3d, poses2d):
        if pose2d is None:
            c2 = (pose3d.coords[:, :2] - c_src) * scale2d + c_dst
            pose2d = Pose2D(coords=c2, valid=pose3d.valid.copy())
        trip = hm.encode_hemlets(pose3d, pose2d, skeleton, (grid, grid), sigma)
        triplets_all.append(trip.maps)
        masks_all.append(trip.mask)
        heat2d_all.append(hm.render_heatmaps_2d(pose2d, (grid, grid), sigma))
        zvox = (pose3d.coords[:, 2] - zlo) * zscale + 1.0
        vox = Pose3D(
            coords=np.column_stack([pose2d.coords, zvox]),
            valid=pose3d.valid.copy(),
            voxel_space=True,
        )
        vols, _flags = hm.render_volumetric_target(
            vox, (depth, grid, grid), (sigma, sigma, min(sigma, depth / 8.0))
        )
        vol_all.append(vols.astype(np.float32))
        pol = hm.part_polarities(pose3d, skeleton)
        for k, (p, c) in enumerate(skeleton.parts):
            if pose3d.valid[p] and pose3d.valid[c]:
                hist[int(pol[k])] += 1
            else:
                hist["masked"] += 1
        coords3d_all.append(pose3d.coords)
        valid_all.append(pose3d.valid)

    meta = {
        "kind": "targets",
        "ids": ids,
        "grid": grid,
        "sigma": sigma,
        "volume_depth": depth,
        "frame2d": {"scale": scale2d, "center_src": list(map(float, c_src)),
                    "center_dst": list(map(float, c_dst))},
        "depth_map": {"scale": zscale, "z_min": zlo},
    }
    arrays = {
        "triplets": np.stack(triplets_all),
        "triplet_mask": np.stack(masks_all),
        "heatmaps2d": np.stack(heat2d_all),
        "volumetric": np.stack(vol_all),
        "poses3d_mm": np.stack(coords3d_all),
        "valid": np.stack([v.astype(np.float64) for v in valid_all]),
    }
    cont.write_file(args.out, arrays, meta, dtypes={"poses3d_mm": "f8"})
    print(f"encoded {len(poses3d)} poses -> {args.out}")
    print("polarity histogram (parts):")
    for key in (-1, 0, 1, "masked"):
        label = {-1: "-1", 0: " 0", 1: "+1", "masked": "masked"}[key]
        print(f"  {label}: {hist[key]}")
    return EXIT_OK


def cmd_decode(args, config):
    arrays, meta = cont.read_file(args.container)
    if "triplets" not in arrays or "triplet_mask" not in arrays:
        raise FormatError("container carries no triplet stacks")
    triplets = arrays["triplets"]
    masks = arrays["triplet_mask"]
    ids = meta.get("ids", [str(i) for i in range(triplets.shape[0])])
    rows = []
    hist = {-1: 0, 0: 0, +1: 0, "unknown": 0}
    for b in range(triplets.shape[0]):
        stack = hm.HeatmapTriplets(maps=triplets[b], mask=masks[b])
        states = []
        for k in range(stack.num_parts):
            try:
                state = hm.decode_hemlets_polarity(stack, k)
                hist[state] += 1
                states.append(str(state))
            except TriheatError:
                hist["unknown"] += 1
                states.append("?")
        rows.append((ids[b] if b < len(ids) else str(b), states))
    if args.json:
        print(json.dumps(
            {"polarities": {rid: states for rid, states in rows}}, sort_keys=True
        ))
    else:
        for rid, states in rows:
            print(f"{rid}: {' '.join(f'{s:>2}' for s in states)}")
        print("decoded polarity histogram:")
        for key in (-1, 0, 1, "unknown"):
            label = {-1: "-1", 0: " 0", 1: "+1", "unknown": "unknown"}[key]
            print(f"  {label}: {hist[key]}")
    return EXIT_OK


def cmd_train_toy(args, config):
    seed = _seed(args, config)
    lr = float(_resolve(args, config, "learning_rate"))
    if lr < 0:
        raise ConfigError("learning rate must be positive or exactly 0")
    data_config = tt.ToyDataConfig(
        num_train=int(_resolve(args, config, "num_train")),
        num_val=int(_resolve(args, config, "num_val")),
        obs_noise_voxels=float(_resolve(args, config, "obs_noise")),
    )
    train_set, val_set = tt.make_toy_data(data_config, seed=int(_resolve(args, config, "data_seed")))
    train_config = tt.TrainConfig(
        epochs=int(_resolve(args, config, "epochs")),
        learning_rate=lr,
        batch_size=int(_resolve(args, config, "batch_size")),
        seed=seed,
        alpha=float(_resolve(args, config, "alpha")),
        use_intermediate=not args.baseline,
    )
    model, log = tt.train_toy(train_set, val_set, train_config)

    with open(args.log, "w", encoding="utf-8") as fh:
        for row in log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    net = model.config
    meta = {
        "kind": "toy_model",
        "net": {
            "input_dim": net.input_dim,
            "num_joints": net.num_joints,
            "num_parts": net.num_parts,
            "volume": list(net.volume),
            "heatmap": list(net.heatmap),
            "hidden_dim": net.hidden_dim,
            "proj_dim": net.proj_dim,
        },
        "seed": seed,
    }
    cont.write_file(
        args.out, model.to_arrays(), meta,
        dtypes={name: "f8" for name in model.PARAM_NAMES},
    )
    final = log[-1] if log else {}
    print(f"trained {train_config.epochs} epochs -> {args.out}")
    if final:
        print(
            f"final l_tot {final['l_tot']:.4f}  "
            f"val voxel-MPJPE {final['val_voxel_mpjpe']:.4f}"
        )
    return EXIT_OK


def _metric_block(pred_list, gt_list, threshold, steps, with_scale):
    reports = [
        mt.evaluate_pair(p, g, threshold, steps, with_scale) for p, g in zip(pred_list, gt_list)
    ]
    return {
        "mpjpe_mm": float(np.mean([r.mpjpe_mm for r in reports])),
        "pa_mpjpe_mm": float(np.mean([r.pa_mpjpe_mm for r in reports])),
        "pck_percent": float(np.mean([r.pck_percent for r in reports])),
        "auc_percent": float(np.mean([r.auc_percent for r in reports])),
        "per_joint_mm": [
            float(v)
            for v in np.nanmean(np.stack([r.per_joint_errors for r in reports]), axis=0)
        ],
        "count": len(reports),
    }


def cmd_eval(args, config):
    pred3d, _p2, pred_ids, _pg = anno.poses_from_jsonl(_read_text(args.pred))
    gt3d, _g2, gt_ids, gt_groups = anno.poses_from_jsonl(_read_text(args.gt))
    if len(pred3d) != len(gt3d):
        raise FormatError(
            f"prediction file has {len(pred3d)} poses but ground truth has {len(gt3d)}"
        )
    if pred3d and pred3d[0].num_joints != gt3d[0].num_joints:
        raise FormatError("prediction and ground-truth joint counts differ")
    threshold = float(_resolve(args, config, "threshold"))
    steps = int(_resolve(args, config, "auc_steps"))
    with_scale = not args.no_scale

    overall = _metric_block(pred3d, gt3d, threshold, steps, with_scale)
    skeleton = canonical_skeleton()
    out = {"overall": overall}
    if args.by_group:
        groups = {}
        for i, g in enumerate(gt_groups):
            groups.setdefault(g if g is not None else "(none)", []).append(i)
        out["groups"] = {
            name: _metric_block(
                [pred3d[i] for i in idx], [gt3d[i] for i in idx], threshold, steps, with_scale
            )
            for name, idx in sorted(groups.items())
        }
    if args.json:
        print(json.dumps(out, sort_keys=True))
        return EXIT_OK

    print(f"poses evaluated: {overall['count']}")
    print(
        f"MPJPE {overall['mpjpe_mm']:.3f} mm   PA-MPJPE {overall['pa_mpjpe_mm']:.3f} mm   "
        f"PCK@{threshold:.0f} {overall['pck_percent']:.2f}%   AUC {overall['auc_percent']:.2f}%"
    )
    print("per-joint mean error (mm):")
    for name, err in zip(skeleton.joints, overall["per_joint_mm"]):
        print(f"  {name:<12s} {err:8.3f}")
    if args.by_group:
        print(f"{'group':<16s} {'MPJPE':>8s} {'PA':>8s} {'PCK':>7s} {'AUC':>7s} {'n':>5s}")
        for name, block in out["groups"].items():
            print(
                f"{name:<16s} {block['mpjpe_mm']:8.3f} {block['pa_mpjpe_mm']:8.3f} "
                f"{block['pck_percent']:7.2f} {block['auc_percent']:7.2f} {block['count']:5d}"
            )
        avg = out["overall"]
        print(
            f"{'Avg':<16s} {avg['mpjpe_mm']:8.3f} {avg['pa_mpjpe_mm']:8.3f} "
            f"{avg['pck_percent']:7.2f} {avg['auc_percent']:7.2f} {avg['count']:5d}"
        )
    return EXIT_OK


def cmd_simulate_fbi(args, config):
    poses3d, poses2d, ids, _groups = anno.poses_from_jsonl(_read_text(args.poses))
    profile = anno.NoiseProfile(
        reliable=(args.reliable_error, args.reliable_skip),
        difficult=(args.difficult_error, args.difficult_skip),
    )
    pose2d_list = [
        p2 if p2 is not None else Pose2D(coords=p3.coords[:, :2], valid=p3.valid.copy())
        for p3, p2 in zip(poses3d, poses2d)
    ]
    fbi = anno.simulate_fbi_annotator(
        poses3d, pose2d_list, profile, seed=_seed(args, config), image_ids=ids
    )
    text = anno.fbi_to_jsonl(fbi)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(text)
    n_labels = sum(
        1 for rec in fbi.records for lab in rec.labels if lab != anno.UNKNOWN
    )
    total = len(fbi.records) * canonical_skeleton().num_parts
    print(f"simulated {len(fbi.records)} images -> {args.out}")
    print(f"labeled parts: {n_labels}/{total}")
    return EXIT_OK


def cmd_convert_ordinal(args, config):
    ordinal = anno.ordinal_from_jsonl(_read_text(args.ordinal))
    fbi = anno.ordinal_to_fbi(ordinal)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(anno.fbi_to_jsonl(fbi))
    print(f"converted {len(ordinal.records)} records -> {args.out}")
    return EXIT_OK


def _save_gray(path, values):
    from PIL import Image

    data = np.clip(values, 0.0, 1.0)
    Image.fromarray((data * 255.0).round().astype(np.uint8), mode="L").save(path)


def cmd_dump(args, config):
    arrays, meta = cont.read_file(args.container)
    os.makedirs(args.out_dir, exist_ok=True)
    count = 0
    layer_names = ("neg", "zero", "pos")
    if "triplets" in arrays:
        trip = arrays["triplets"]
        for b in range(trip.shape[0]):
            for k in range(trip.shape[1]):
                for layer in range(3):
                    name = f"pose{b:04d}_part{k:02d}_{layer_names[layer]}.png"
                    _save_gray(os.path.join(args.out_dir, name), trip[b, k, layer])
                    count += 1
    if "heatmaps2d" in arrays:
        heat = arrays["heatmaps2d"]
        for b in range(heat.shape[0]):
            for n in range(heat.shape[1]):
                name = f"pose{b:04d}_joint{n:02d}.png"
                _save_gray(os.path.join(args.out_dir, name), heat[b, n])
                count += 1
    if "volumetric" in arrays:
        vol = arrays["volumetric"]
        for b in range(vol.shape[0]):
            for n in range(vol.shape[1]):
                name = f"pose{b:04d}_joint{n:02d}_volmax.png"
                _save_gray(os.path.join(args.out_dir, name), vol[b, n].max(axis=0))
                count += 1
    skeleton = canonical_skeleton()
    if "poses3d_mm" in arrays:
        coords = arrays["poses3d_mm"]
        for b in range(coords.shape[0]):
            obj = stick_figure_obj(coords[b], skeleton.parts)
            with open(os.path.join(args.out_dir, f"pose{b:04d}.obj"), "w", encoding="utf-8") as fh:
                fh.write(obj)
            count += 1
    print(f"wrote {count} files to {args.out_dir}")
    return EXIT_OK


def _rig_from_container(path) -> RigTemplate:
    arrays, meta = cont.read_file(path)
    needed = ("template_vertices", "joint_regressor", "parents", "skin_weights", "shape_basis", "faces")
    for name in needed:
        if name not in arrays:
            raise FormatError(f"rig container missing entry {name!r}")
    return RigTemplate(
        template_vertices=arrays["template_vertices"],
        joint_regressor=arrays["joint_regressor"],
        parents=tuple(int(round(v)) for v in arrays["parents"]),
        skin_weights=arrays["skin_weights"],
        shape_basis=arrays["shape_basis"],
        faces=arrays["faces"].astype(np.int64),
    )


def rig_to_container(path, rig: RigTemplate) -> None:
    arrays = {
        "template_vertices": rig.template_vertices,
        "joint_regressor": rig.joint_regressor,
        "parents": np.asarray(rig.parents, dtype=np.float64),
        "skin_weights": rig.skin_weights,
        "shape_basis": rig.shape_basis,
        "faces": rig.faces.astype(np.float64),
    }
    cont.write_file(
        path, arrays, {"kind": "rig"}, dtypes={name: "f8" for name in arrays}
    )


def cmd_skin(args, config):
    if args.params:
        with open(args.params, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"params file is not valid JSON: {exc}") from exc
        try:
            params = BodyParams(np.asarray(doc["beta"]), np.asarray(doc["theta"]))
        except (KeyError, TypeError) as exc:
            raise FormatError("params file must carry 'beta' (10) and 'theta' (24x3)") from exc
    else:
        params = BodyParams.zero()
    rig = _rig_from_container(args.rig) if args.rig else make_mini_rig()
    mesh = skin(params, rig)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(mesh_to_obj(mesh, rig.faces))
    print(f"skinned {rig.num_vertices} vertices -> {args.out}")
    return EXIT_OK


def cmd_topology(args, config):
    print(topology_to_json(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triheat",
        description="Triplet-heatmap targets, toy training, and pose evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with default overrides")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("encode", help="build triplet/2D/volumetric targets from a pose file")
    common(p)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--volume-depth", dest="volume_depth", type=int, default=None)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="recover per-part polarities from a target container")
    common(p)
    p.add_argument("--container", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train-toy", help="run the toy end-to-end training demonstration")
    common(p)
    p.add_argument("--out", required=True, help="model container path")
    p.add_argument("--log", required=True, help="JSONL loss log path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--baseline", action="store_true", help="disable intermediate supervision")
    p.add_argument("--num-train", dest="num_train", type=int, default=None)
    p.add_argument("--num-val", dest="num_val", type=int, default=None)
    p.add_argument("--obs-noise", dest="obs_noise", type=float, default=None)
    p.add_argument("--data-seed", dest="data_seed", type=int, default=None)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", help="evaluate a prediction pose file against ground truth")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--auc-steps", dest="auc_steps", type=int, default=None)
    p.add_argument("--no-scale", action="store_true", help="rigid-only Procrustes alignment")
    p.add_argument("--by-group", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate-fbi", help="simulate a weak annotator over ground-truth poses")
    common(p)
    p.add_argument("--poses", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reliable-error", type=float, default=0.074)
    p.add_argument("--reliable-skip", type=float, default=0.10)
    p.add_argument("--difficult-error", type=float, default=0.20)
    p.add_argument("--difficult-skip", type=float, default=0.25)
    p.set_defaults(func=cmd_simulate_fbi)

    p = sub.add_parser("convert-ordinal", help="adapt pairwise ordinal labels to per-part labels")
    common(p)
    p.add_argument("--ordinal", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert_ordinal)

    p = sub.add_parser("dump", help="write grayscale images and stick-figure OBJs from a container")
    common(p)
    p.add_argument("--container", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("skin", help="pose the toy body rig and export an OBJ mesh")
    common(p)
    p.add_argument("--params", help="JSON file with beta (10) and theta (24x3)")
    p.add_argument("--rig", help="rig container (default: built-in mini rig)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_skin)

    p = sub.add_parser("topology", help="print the canonical skeleton document")
    common(p)
    p.set_defaults(func=cmd_topology)

    return parser


def main(argv=None) -> int:
    _limit_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TriheatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
