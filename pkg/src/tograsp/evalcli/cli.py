"""Command-line front end.

Subcommands: gen-data, train-hand, train-object, train-embed,
train-togt, eval, infer, gradcheck. Exit codes: 0 success, 1 usage
error (synopsis goes to stderr), 2 runtime failure. Every run writes a
run.json manifest (command, config, seed, versions) into its --out
directory; manifests carry no timestamps, so a rerun with the same
arguments reproduces every output byte for byte.

Model store layout under a models directory:

    hand/, hand_noobj/        wrist pose + joint angle nets
    object_<cat>_<cond>/      object pose nets, cond in hpc|hjp|none
    siamese/, store.npz       shape embedding nets + mesh store
    togt/                     grasp suitability net
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys

import numpy as np

from .. import __version__
from ..datagen import (
    DatasetConfig,
    balanced_labeled_grasps,
    build_dataset,
    load_mesh_bundle,
    load_split,
)
from ..datagen.meshes import CATEGORIES
from ..models import (
    COND_MODES,
    HandNets,
    ObjectNets,
    SiameseModel,
    TASK_FOR_CATEGORY,
    TogTModel,
    load_store,
    save_store,
    train_hand,
    train_object,
    train_siamese,
    train_togt,
    voxels_as_input,
)
from .gradcheck import TOLERANCE, run_all
from .infer import run_inference
from .report import MissingModel, evaluate, pair_reports

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}error: {message}")


def _write_run_manifest(out_dir, command, args):
    os.makedirs(out_dir, exist_ok=True)
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "tograsp": __version__,
        },
    }
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _merge_split(split):
    keys = ("X", "XHc", "XO", "XOc", "joints", "p_H", "W_H", "beta", "p_O", "W_O")
    cats = sorted(split)
    return {k: np.concatenate([split[c][k] for c in cats]) for k in keys}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args):
    cfg = DatasetConfig(
        categories=tuple(args.category) if args.category else CATEGORIES,
        n_train=args.n,
        n_test=args.n_test,
        n_heldout=args.n_heldout,
        n_train_meshes=args.train_meshes,
        n_test_meshes=args.test_meshes,
        per_triangle=args.per_triangle,
        seed=args.seed,
    )
    records = build_dataset(args.out, cfg)
    _write_run_manifest(args.out, "gen-data", args)
    print(f"wrote {len(records)} records under {args.out}")
    return EXIT_OK


def cmd_train_hand(args):
    split = load_split(args.dataset, "train", args.category)
    data = _merge_split(split)
    nets = HandNets(seed=args.seed)
    losses = train_hand(nets, data, steps=args.steps,
                        refine_steps=args.refine_steps, batch=args.batch,
                        lr=args.lr, seed=args.seed, zero_object=args.no_object)
    name = "hand_noobj" if args.no_object else "hand"
    nets.save(os.path.join(args.out, name))
    _write_run_manifest(args.out, "train-hand", args)
    print(f"saved {name}; final losses: " +
          ", ".join(f"{k}={v:.5f}" for k, v in sorted(losses.items())))
    return EXIT_OK


def cmd_train_object(args):
    split = load_split(args.dataset, "train", (args.category,))
    if args.category not in split:
        raise ValueError(f"dataset has no training samples for {args.category!r}")
    nets = ObjectNets(args.category, cond_mode=args.cond, seed=args.seed)
    losses = train_object(nets, split[args.category], steps=args.steps,
                          batch=args.batch, lr=args.lr, seed=args.seed,
                          noise_deg=args.noise_deg)
    name = f"object_{args.category}_{args.cond}"
    nets.save(os.path.join(args.out, name))
    _write_run_manifest(args.out, "train-object", args)
    print(f"saved {name}; final losses: " +
          ", ".join(f"{k}={v:.5f}" for k, v in sorted(losses.items())))
    return EXIT_OK


def cmd_train_embed(args):
    split = load_split(args.dataset, "train")
    cats = sorted(split)
    images = np.concatenate([split[c]["XOc"] for c in cats])
    ids = [m for c in cats for m in split[c]["mesh_ids"]]
    bundle = load_mesh_bundle(args.dataset)
    train_meshes = {m: b for m, b in bundle.items() if b["split"] == "train"}
    voxels = {m: voxels_as_input(b["grid"]) for m, b in train_meshes.items()}
    categories = {m: b["category"] for m, b in train_meshes.items()}
    model = SiameseModel(seed=args.seed)
    loss = train_siamese(model, images, ids, voxels, categories,
                         steps=args.steps, batch=args.batch, lr=args.lr,
                         seed=args.seed, neg_ratio=args.neg_ratio)
    model.save(os.path.join(args.out, "siamese"))
    store = model.build_store(voxels)
    save_store(os.path.join(args.out, "store.npz"), store)
    _write_run_manifest(args.out, "train-embed", args)
    print(f"saved siamese + {len(store)}-mesh store; final loss {loss:.5f}")
    return EXIT_OK


def cmd_train_togt(args):
    bundle = load_mesh_bundle(args.dataset)
    records = []
    for mi, mesh_id in enumerate(sorted(bundle)):
        b = bundle[mesh_id]
        if b["split"] != "train":
            continue
        task = TASK_FOR_CATEGORY[b["category"]]
        for r in balanced_labeled_grasps(b["cloud"], b["point_labels"],
                                         b["category"], task,
                                         args.grasps_per_mesh, seed=[args.seed, mi]):
            records.append({"cloud": b["cloud"], "grasp": r["grasp"],
                            "task": task, "label": r["label"]})
    model = TogTModel(seed=args.seed)
    loss = train_togt(model, records, steps=args.steps, batch=args.batch,
                      lr=args.lr, seed=args.seed, dropout_max=args.dropout_max)
    model.save(os.path.join(args.out, "togt"))
    _write_run_manifest(args.out, "train-togt", args)
    print(f"saved togt ({len(records)} grasp records); final loss {loss:.5f}")
    return EXIT_OK


def _load_object_models(models_dir, cats, cond):
    out = {}
    for cat in cats:
        path = os.path.join(models_dir, f"object_{cat}_{cond}")
        if not os.path.isdir(path):
            raise MissingModel(f"no object model at {path}")
        out[cat] = ObjectNets.load(path)
    return out


def cmd_eval(args):
    data = load_split(args.dataset, args.split, args.category)
    bundle = load_mesh_bundle(args.dataset)
    os.makedirs(args.out, exist_ok=True)

    if args.oracle:
        models = {"hand": "oracle", "object": "oracle", "siamese": "oracle"}
        report = evaluate(models, data, mesh_bundle=bundle)
        report.save(args.out)
        _write_run_manifest(args.out, "eval", args)
        print(report.to_text())
        return EXIT_OK

    if args.ablation == "hand":
        with_nets = HandNets.load(os.path.join(args.models, "hand"))
        without_nets = HandNets.load(os.path.join(args.models, "hand_noobj"))
        rep_with = evaluate({"hand": with_nets}, data)
        rep_without = evaluate({"hand": without_nets}, data, hand_conditioning="zero")
    elif args.ablation in ("object", "representation"):
        other = "none" if args.ablation == "object" else "hjp"
        rep_with = evaluate(
            {"object": _load_object_models(args.models, sorted(data), "hpc")}, data)
        rep_without = evaluate(
            {"object": _load_object_models(args.models, sorted(data), other)}, data)
    else:
        models = {}
        if os.path.isdir(os.path.join(args.models, "hand")):
            models["hand"] = HandNets.load(os.path.join(args.models, "hand"))
        obj_dirs = {
            cat: os.path.join(args.models, f"object_{cat}_hpc") for cat in data
        }
        if all(os.path.isdir(p) for p in obj_dirs.values()):
            models["object"] = {c: ObjectNets.load(p) for c, p in obj_dirs.items()}
        if (os.path.isdir(os.path.join(args.models, "siamese"))
                and os.path.exists(os.path.join(args.models, "store.npz"))):
            models["siamese"] = SiameseModel.load(os.path.join(args.models, "siamese"))
            models["store"] = load_store(os.path.join(args.models, "store.npz"))
        report = evaluate(models, data, mesh_bundle=bundle)
        report.save(args.out)
        _write_run_manifest(args.out, "eval", args)
        print(report.to_text())
        return EXIT_OK

    rep_with.save(args.out, "report_with")
    rep_without.save(args.out, "report_without")
    pairs = pair_reports(rep_with, rep_without)
    with open(os.path.join(args.out, "ablation.json"), "w") as fh:
        json.dump({"ablation": args.ablation, "pairs": pairs}, fh,
                  sort_keys=True, indent=1)
        fh.write("\n")
    _write_run_manifest(args.out, "eval", args)
    print(f"[{args.ablation} ablation] with:")
    print(rep_with.to_text())
    print("without:")
    print(rep_without.to_text())
    return EXIT_OK


def cmd_infer(args):
    model = TogTModel.load(os.path.join(args.models, "togt"))
    result = run_inference(
        args.cloud, args.category, args.task, model,
        n_candidates=args.candidates, seed=args.seed,
        suit_threshold=args.suit_threshold, stab_threshold=args.stab_threshold,
        workspace=args.workspace,
    )
    grasps = [
        {
            "anchor": g.anchor.tolist(),
            "normal": g.normal.tolist(),
            "omega": g.omega,
            "s": g.s,
            "suitability": float(result["suitability"][i]),
            "stability": float(result["stability"][i]),
        }
        for i, g in enumerate(result["grasps"])
    ]
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "grasps.json"), "w") as fh:
        json.dump({
            "chosen_index": int(result["chosen_index"]),
            "order": [int(i) for i in result["order"]],
            "grasps": grasps,
        }, fh, sort_keys=True, indent=1)
        fh.write("\n")
    _write_run_manifest(args.out, "infer", args)
    c = result["chosen"]
    print(f"chosen grasp #{result['chosen_index']}: anchor "
          f"({c.anchor[0]:.1f}, {c.anchor[1]:.1f}, {c.anchor[2]:.1f}) mm, "
          f"omega {c.omega:.1f} deg, standoff {c.s:.1f} mm")
    return EXIT_OK


def cmd_gradcheck(args):
    results = run_all(seed=args.seed)
    for name, err in results.items():
        print(f"{name:22s} {err:.3e}")
    worst = max(results.values())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.json"), "w") as fh:
            json.dump({"results": results, "worst": worst,
                       "tolerance": TOLERANCE}, fh, sort_keys=True, indent=1)
            fh.write("\n")
        _write_run_manifest(args.out, "gradcheck", args)
    if worst >= TOLERANCE:
        print(f"FAIL: worst relative error {worst:.3e} >= {TOLERANCE}",
              file=sys.stderr)
        return EXIT_RUNTIME
    print(f"ok: worst relative error {worst:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="tograsp", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="cmd")

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")

    g = sub.add_parser("gen-data", help="build a synthetic dataset")
    common(g)
    g.add_argument("--category", action="append", choices=CATEGORIES)
    g.add_argument("--n", type=int, default=64, help="training samples per category")
    g.add_argument("--n-test", type=int, default=0)
    g.add_argument("--n-heldout", type=int, default=0)
    g.add_argument("--train-meshes", type=int, default=8)
    g.add_argument("--test-meshes", type=int, default=2)
    g.add_argument("--per-triangle", type=int, default=20)
    g.set_defaults(func=cmd_gen_data)

    th = sub.add_parser("train-hand", help="train the hand pose nets")
    common(th)
    th.add_argument("--dataset", required=True)
    th.add_argument("--category", action="append", choices=CATEGORIES)
    th.add_argument("--steps", type=int, default=600)
    th.add_argument("--refine-steps", type=int, default=400)
    th.add_argument("--batch", type=int, default=32)
    th.add_argument("--lr", type=float, default=1e-3)
    th.add_argument("--no-object", action="store_true",
                    help="zero out the object-pose conditioning (ablation)")
    th.set_defaults(func=cmd_train_hand)

    to = sub.add_parser("train-object", help="train one category's object pose nets")
    common(to)
    to.add_argument("--dataset", required=True)
    to.add_argument("--category", required=True, choices=CATEGORIES)
    to.add_argument("--cond", default="hpc", choices=sorted(COND_MODES))
    to.add_argument("--steps", type=int, default=500)
    to.add_argument("--batch", type=int, default=32)
    to.add_argument("--lr", type=float, default=1e-3)
    to.add_argument("--noise-deg", type=float, default=30.0)
    to.set_defaults(func=cmd_train_object)

    te = sub.add_parser("train-embed", help="train the shape retrieval embedding")
    common(te)
    te.add_argument("--dataset", required=True)
    te.add_argument("--steps", type=int, default=400)
    te.add_argument("--batch", type=int, default=16)
    te.add_argument("--lr", type=float, default=1e-3)
    te.add_argument("--neg-ratio", type=int, default=3)
    te.set_defaults(func=cmd_train_embed)

    tt = sub.add_parser("train-togt", help="train the grasp suitability net")
    common(tt)
    tt.add_argument("--dataset", required=True)
    tt.add_argument("--steps", type=int, default=300)
    tt.add_argument("--batch", type=int, default=16)
    tt.add_argument("--lr", type=float, default=1e-3)
    tt.add_argument("--grasps-per-mesh", type=int, default=100)
    tt.add_argument("--dropout-max", type=float, default=0.4)
    tt.set_defaults(func=cmd_train_togt)

    ev = sub.add_parser("eval", help="metric tables over a dataset split")
    common(ev)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--models", default="",
                    help="models directory (unused with --oracle)")
    ev.add_argument("--split", default="test",
                    choices=("train", "test", "heldout"))
    ev.add_argument("--category", action="append", choices=CATEGORIES)
    ev.add_argument("--ablation", choices=("hand", "object", "representation"))
    ev.add_argument("--oracle", action="store_true",
                    help="score ground truth against itself (harness self-test)")
    ev.set_defaults(func=cmd_eval)

    inf = sub.add_parser("infer", help="rank grasps on a point cloud")
    common(inf)
    inf.add_argument("--cloud", required=True, help="point cloud file (.xyz)")
    inf.add_argument("--category", required=True, choices=CATEGORIES)
    inf.add_argument("--task", required=True)
    inf.add_argument("--models", required=True)
    inf.add_argument("--candidates", type=int, default=200)
    inf.add_argument("--suit-threshold", type=float, default=0.5)
    inf.add_argument("--stab-threshold", type=float, default=0.5)
    inf.add_argument("--workspace", type=float, nargs=6, metavar="MM",
                     help="keep anchors inside this box: x0 y0 z0 x1 y1 z1")
    inf.set_defaults(func=cmd_infer)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--out", default=None, help="optional report directory")
    gc.set_defaults(func=cmd_gradcheck)

    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:      # argparse -h exits directly
        return int(e.code or 0)
    if getattr(args, "cmd", None) is None:
        print(parser.format_usage(), file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
