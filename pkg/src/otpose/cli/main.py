"""Command-line interface.

Commands: ``synth-gen`` (write a synthetic dataset), ``train``, ``eval``,
``gradcheck`` (finite-difference suite), ``bench-attention`` (complexity
benchmark), and ``render`` (PGM images of heatmaps, attention maps, or
decoded skeletons).  ``OTPOSE_THREADS`` caps per-sequence parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .. import metrics as mx
from .. import training
from . import bench, checks, ckpt, dataset, evaluate, render, tensorfile
from .config import RunConfig


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.scene.seed = args.seed
        cfg.train.seed = args.seed
    if getattr(args, "ablation", None):
        cfg.apply_ablation(args.ablation)
    if getattr(args, "n_layers", None) is not None:
        cfg.model.te_layers = args.n_layers
        cfg.model.oe_layers = args.n_layers
    if getattr(args, "epochs", None) is not None:
        cfg.train.total_epochs = args.epochs
    if getattr(args, "dtype", None):
        cfg.model.dtype = args.dtype
    return cfg


def cmd_synth_gen(args) -> int:
    cfg = _load_config(args)
    try:
        manifest = dataset.generate_dataset(cfg, args.out)
    except OSError as e:
        print(f"error: cannot write dataset to {args.out}: {e}",
              file=sys.stderr)
        return 1
    n = len(manifest["sequences"])
    print(f"wrote {n} sequences x {cfg.data.n_frames} frames to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    try:
        bundle = dataset.load_dataset(args.data)
    except (OSError, KeyError) as e:
        print(f"error: cannot load dataset from {args.data}: {e}",
              file=sys.stderr)
        return 1
    windows = dataset.training_windows(bundle)
    metrics_path = args.metrics or f"{args.out}.metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as mf:
        def log(rec):
            mf.write(json.dumps(rec, sort_keys=True) + "\n")

        model, history = training.train(windows, cfg.model_config(),
                                        cfg.train_config(), log=log)
    ckpt.save_checkpoint(args.out, model, cfg)
    last = history[-1]
    print(f"trained {last['step']} steps; final l_occ={last['l_occ']:.4f} "
          f"l_pred={last['l_pred']:.4f}; checkpoint at {args.out}")
    return 0


def cmd_eval(args) -> int:
    try:
        model, _ = ckpt.load_checkpoint(args.checkpoint)
    except (OSError, ckpt.CheckpointError, tensorfile.TensorFileError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    bundle = dataset.load_dataset(args.data)
    report = evaluate.evaluate_split(model, bundle, split=args.split)
    print(evaluate.format_report(report))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(report, f, sort_keys=True, indent=1)
        print(f"report written to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = checks.run_all(seed=args.seed or 0)
    print(checks.format_results(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_bench_attention(args) -> int:
    rows = bench.run_bench(seed=args.seed or 0)
    print(bench.format_table(rows))
    slope = bench.fit_scaling_exponent(rows, "keypoint")
    print(f"keypoint-wise wall-time scaling exponent over L: {slope:.2f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump({"rows": rows, "keypoint_scaling_exponent": slope},
                      f, sort_keys=True, indent=1)
    return 0


def cmd_render(args) -> int:
    import os
    os.makedirs(args.out, exist_ok=True)
    try:
        primary, named = tensorfile.load(args.input)
    except (OSError, tensorfile.TensorFileError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    arr = primary if named is None else named.get(args.tensor or "")
    if arr is None:
        keys = sorted(named) if named else []
        print(f"error: tensor {args.tensor!r} not found; container holds "
              f"{keys[:5]}...", file=sys.stderr)
        return 1
    arr = np.asarray(arr, dtype=np.float64)
    while arr.ndim > 3 and arr.shape[0] >= 1:
        arr = arr[args.index if arr.ndim > 4 else 0]
    base = f"{args.out}/{args.prefix}"
    if args.kind == "heatmap":
        if arr.ndim == 2:
            arr = arr[None]
        render.save_pgm(f"{base}.pgm", render.to_gray(
            render.tile_channels(arr)))
        print(f"wrote {base}.pgm")
    elif args.kind == "attention":
        render.save_pgm(f"{base}.pgm", render.to_gray(
            render.attention_grid(arr)))
        print(f"wrote {base}.pgm")
    elif args.kind == "skeleton":
        if arr.ndim == 2:
            arr = arr[None]
        pose = mx.decode(arr)
        canvas = render.skeleton_overlay(pose.positions, arr.shape[-2],
                                         arr.shape[-1])
        render.save_pgm(f"{base}.pgm", render.to_gray(canvas))
        print(f"wrote {base}.pgm")
    else:
        print(f"error: unknown render kind {args.kind}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otpose",
        description="Occlusion-aware temporal refinement of keypoint "
                    "heatmap videos")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON run configuration")
        if seed:
            p.add_argument("--seed", type=int, help="override scene/train seed")

    p = sub.add_parser("synth-gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_synth_gen)

    p = sub.add_parser("train", help="train on a generated dataset")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path (.ott)")
    p.add_argument("--ablation",
                   help="switches like one_branch, no_oe, one_branch+no_oe")
    p.add_argument("--n-layers", type=int, dest="n_layers",
                   help="encoder depth for both encoders")
    p.add_argument("--epochs", type=int, help="override total epochs")
    p.add_argument("--dtype", choices=("f32", "f64"), help="training dtype")
    p.add_argument("--metrics", help="metrics JSONL path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench-attention",
                       help="attention memory/time complexity benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write rows as JSON")
    p.set_defaults(fn=cmd_bench_attention)

    p = sub.add_parser("render", help="render tensors to PGM images")
    p.add_argument("--input", required=True, help="a .ott tensor file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--kind", default="heatmap",
                   choices=("heatmap", "attention", "skeleton"))
    p.add_argument("--tensor", help="name inside a container file")
    p.add_argument("--index", type=int, default=0,
                   help="leading index for rank > 4 tensors")
    p.add_argument("--prefix", default="render")
    p.set_defaults(fn=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
