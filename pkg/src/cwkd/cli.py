"""Command-line entry point.

Subcommands: gen-data, gradcheck, train-teacher, distill, compare, ablate,
complexity, dump-channels.  Every run writes a ``manifest.json`` into the
output directory recording the command, the fully-resolved config, the
seeds, and the artifact format versions; outputs carry no timestamps, so a
rerun with the same config into an empty directory is byte-identical.

``CWKD_THREADS`` caps how many comparison/ablation runs execute in
parallel (default 1, serial).
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from . import data as data_mod
from . import gradcheck as gradcheck_mod
from .errors import CwkdError, TrainingDiverged
from .losses import DISTILL_LOSS_KINDS, channel_distribution
from .metrics import complexity
from .models import CHECKPOINT_FORMAT, forward, load_checkpoint, save_checkpoint
from .tensor_core import write_cwt1
from .trainer import (
    DEFAULT_ALPHA_GRID,
    DEFAULT_T_GRID,
    ExperimentConfig,
    ablate,
    distill,
    load_config,
    make_datasets,
    run_comparison,
    train_teacher,
    write_metrics_csv,
)

_FMT = ".17g"


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, seeds=[args.seed])
    return cfg


def _ensure_out(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out, command, cfg, extra=None):
    manifest = {
        "command": command,
        "config": cfg.to_dict() if cfg is not None else None,
        "versions": {
            "cwkd": __version__,
            "dataset_format": data_mod.DATASET_FORMAT,
            "checkpoint_format": CHECKPOINT_FORMAT,
            "dump_format": "CWT1",
        },
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            cells = []
            for col in columns:
                v = row.get(col, "")
                if isinstance(v, float):
                    v = format(v, _FMT)
                cells.append(v)
            writer.writerow(cells)


def _threads() -> int:
    return max(1, int(os.environ.get("CWKD_THREADS", "1")))


def _run_mapped(jobs_runner):
    """Run ``jobs_runner(map_fn)`` serially or on a spawn pool."""
    n = _threads()
    if n == 1:
        return jobs_runner(map)
    ctx = multiprocessing.get_context("spawn")
    with ctx.Pool(n) as pool:
        return jobs_runner(pool.map)


def _load_teacher(parser, args):
    path = getattr(args, "teacher", None)
    if not path or not os.path.isdir(path):
        parser.error(f"--teacher must point to a checkpoint directory, got {path!r}")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_gen_data(parser, args) -> int:
    cfg = _load_cfg(args)
    out = _ensure_out(args)
    d = cfg.data
    dataset = data_mod.generate(d.seed, d.count, d.height, d.width, d.classes, d.noise)
    data_mod.save_dataset(dataset, out)
    _write_manifest(out, "gen-data", cfg, {"seed": d.seed})
    print(f"wrote {len(dataset)} scenes ({d.height}x{d.width}, {d.classes} classes) to {out}")
    return 0


def _cmd_gradcheck(parser, args) -> int:
    report = gradcheck_mod.check_all_losses(seed=args.seed or 0,
                                            tolerance=args.tolerance)
    text = report.to_json()
    if args.out:
        out = _ensure_out(args)
        with open(os.path.join(out, "gradcheck.json"), "w") as fh:
            fh.write(text + "\n")
        _write_manifest(out, "gradcheck", None,
                        {"seed": args.seed or 0, "tolerance": args.tolerance})
    print(text)
    return 0 if report.passed else 1


def _cmd_train_teacher(parser, args) -> int:
    cfg = _load_cfg(args)
    out = _ensure_out(args)
    train, val = make_datasets(cfg)
    try:
        result = train_teacher(cfg, train, val)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    save_checkpoint(result.best_net, os.path.join(out, "teacher_best"))
    save_checkpoint(result.net, os.path.join(out, "teacher_final"))
    write_metrics_csv(os.path.join(out, "metrics.csv"), result.rows, [])
    _write_manifest(out, "train-teacher", cfg, {
        "seed": cfg.seed,
        "best_val_miou": result.best_val,
        "final_val_miou": result.final_val,
    })
    print(f"teacher best val mIoU {result.best_val:.4f} "
          f"(final {result.final_val:.4f}); checkpoints in {out}")
    return 0


def _dump_diverged(out, exc: TrainingDiverged):
    with open(os.path.join(out, "diverged.json"), "w") as fh:
        json.dump({"step": exc.step, "components": exc.components}, fh, indent=2)
        fh.write("\n")


def _cmd_distill(parser, args) -> int:
    cfg = _load_cfg(args)
    teacher = _load_teacher(parser, args)
    out = _ensure_out(args)
    train, val = make_datasets(cfg)
    run_seed = args.seed if args.seed is not None else cfg.seeds[0]
    try:
        result = distill(cfg, teacher, run_seed, train, val)
    except TrainingDiverged as exc:
        _dump_diverged(out, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    save_checkpoint(result.best_net, os.path.join(out, "student_best"))
    save_checkpoint(result.net, os.path.join(out, "student_final"))
    write_metrics_csv(os.path.join(out, "metrics.csv"), result.rows,
                      result.loss_labels)
    _write_manifest(out, "distill", cfg, {
        "seed": run_seed,
        "best_val_miou": result.best_val,
        "final_val_miou": result.final_val,
    })
    print(f"student best val mIoU {result.best_val:.4f} "
          f"(final {result.final_val:.4f}); checkpoints in {out}")
    return 0


def _parse_losses(parser, text):
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    for k in kinds:
        if k not in DISTILL_LOSS_KINDS:
            parser.error(f"unknown loss kind {k!r}; choose from {DISTILL_LOSS_KINDS}")
    return kinds


def _cmd_compare(parser, args) -> int:
    cfg = _load_cfg(args)
    teacher = _load_teacher(parser, args)
    out = _ensure_out(args)
    train, val = make_datasets(cfg)
    kinds = _parse_losses(parser, args.losses) if args.losses else list(DISTILL_LOSS_KINDS)
    rows = _run_mapped(lambda m: run_comparison(
        cfg, teacher, train, val, kinds, map_fn=m))

    _write_csv(os.path.join(out, "comparison_runs.csv"),
               ["loss", "target", "seed", "val_miou", "final_miou"], rows)
    summary = _summarize_comparison(rows, cfg, teacher)
    _write_csv(os.path.join(out, "comparison.csv"),
               ["loss", "target", "val_miou_mean", "val_miou_std",
                "delta_vs_baseline", "complexity"], summary)
    _write_manifest(out, "compare", cfg, {"seeds": cfg.seeds, "losses": kinds})
    for row in summary:
        print(f"{row['loss']:>18} {row['target']:>10} "
              f"mIoU {row['val_miou_mean']:.4f} ± {row['val_miou_std']:.4f} "
              f"Δ {row['delta_vs_baseline']:+.4f}")
    return 0


def _summarize_comparison(rows, cfg, teacher):
    by_loss = {}
    order = []
    for row in rows:
        key = (row["loss"], row["target"])
        if key not in by_loss:
            by_loss[key] = []
            order.append(key)
        by_loss[key].append(row["val_miou"])
    base = by_loss.get(("baseline", "-"), [float("nan")])
    base_mean = float(np.mean(base))
    summary = []
    for loss, target in order:
        vals = np.array(by_loss[(loss, target)])
        mean = float(vals.mean())
        std = float(vals.std())
        if loss == "baseline":
            term = "-"
        else:
            c = teacher.width if target == "featuremap" else teacher.classes
            term = complexity(loss, cfg.data.height, cfg.data.width, c,
                              n=cfg.data.classes, p=2).term
        summary.append({
            "loss": loss, "target": target, "val_miou_mean": mean,
            "val_miou_std": std, "delta_vs_baseline": mean - base_mean,
            "complexity": term,
        })
    return summary


def _parse_grid(parser, text, name):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        parser.error(f"{name} must be a comma-separated list of numbers, got {text!r}")


def _cmd_ablate(parser, args) -> int:
    cfg = _load_cfg(args)
    teacher = _load_teacher(parser, args)
    out = _ensure_out(args)
    train, val = make_datasets(cfg)
    t_grid = _parse_grid(parser, args.grid_T, "--grid-T") if args.grid_T else DEFAULT_T_GRID
    a_grid = _parse_grid(parser, args.grid_alpha, "--grid-alpha") \
        if args.grid_alpha else DEFAULT_ALPHA_GRID
    rows = _run_mapped(lambda m: ablate(
        cfg, teacher, train, val, t_grid, a_grid, map_fn=m))
    _write_csv(os.path.join(out, "ablation_runs.csv"),
               ["sweep", "temperature", "alpha", "seed", "val_miou", "final_miou"],
               rows)
    summary = _summarize_ablation(rows)
    _write_csv(os.path.join(out, "ablation.csv"),
               ["sweep", "temperature", "alpha", "val_miou_mean", "val_miou_std"],
               summary)
    _write_manifest(out, "ablate", cfg, {
        "seeds": cfg.seeds, "grid_T": list(t_grid), "grid_alpha": list(a_grid)})
    for row in summary:
        print(f"{row['sweep']:>12} T={row['temperature']:<8g} α={row['alpha']:<6g} "
              f"mIoU {row['val_miou_mean']:.4f} ± {row['val_miou_std']:.4f}")
    return 0


def _summarize_ablation(rows):
    groups = {}
    order = []
    for row in rows:
        key = (row["sweep"], row["temperature"], row["alpha"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row["val_miou"])
    summary = []
    for sweep, t, a in order:
        vals = np.array(groups[(sweep, t, a)])
        summary.append({"sweep": sweep, "temperature": t, "alpha": a,
                        "val_miou_mean": float(vals.mean()),
                        "val_miou_std": float(vals.std())})
    return summary


def _cmd_complexity(parser, args) -> int:
    rows = []
    for kind in DISTILL_LOSS_KINDS:
        rep = complexity(kind, args.height, args.width, args.channels,
                         n=args.classes, p=args.p)
        rows.append({"loss": kind, "term": rep.term, "value": rep.value})
    for row in rows:
        print(f"{row['loss']:>18}  {row['term']:<12} = {row['value']}")
    if args.out:
        out = _ensure_out(args)
        _write_csv(os.path.join(out, "complexity.csv"),
                   ["loss", "term", "value"], rows)
        _write_manifest(out, "complexity", None, {
            "dims": {"h": args.height, "w": args.width, "c": args.channels,
                     "n": args.classes, "p": args.p}})
    return 0


def _cmd_dump_channels(parser, args) -> int:
    cfg = _load_cfg(args)
    if not args.checkpoint or not os.path.isdir(args.checkpoint):
        parser.error(f"--checkpoint must point to a checkpoint directory, "
                     f"got {args.checkpoint!r}")
    net = load_checkpoint(args.checkpoint)
    out = _ensure_out(args)
    _, val = make_datasets(cfg)
    count = min(args.count, len(val))
    images = val.images[:count]
    taps = forward(net, images)
    for tap_name, tensor in (("feature", taps.feature), ("score", taps.score)):
        dist = channel_distribution(tensor, args.temperature)
        n, c, _ = dist.shape
        write_cwt1(os.path.join(out, f"{tap_name}_dist.cwt"),
                   dist.reshape(n, c, tensor.shape[2], tensor.shape[3]))
    _write_manifest(out, "dump-channels", cfg, {
        "checkpoint": os.path.basename(os.path.normpath(args.checkpoint)),
        "count": count, "temperature": args.temperature})
    print(f"wrote per-channel distributions for {count} scenes to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cwkd",
        description="channel-wise distillation lab: data, training, "
                    "distillation, and verification commands")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, teacher=False):
        p.add_argument("--config", help="path to a JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        if teacher:
            p.add_argument("--teacher", required=True,
                           help="teacher checkpoint directory")

    p = sub.add_parser("gen-data", help="write the synthetic dataset")
    common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss kernel")
    common(p)
    p.add_argument("--tolerance", type=float, default=gradcheck_mod.DEFAULT_TOLERANCE)

    p = sub.add_parser("train-teacher", help="cross-entropy pretraining of the teacher")
    common(p)

    p = sub.add_parser("distill", help="train a student under a frozen teacher")
    common(p, teacher=True)

    p = sub.add_parser("compare", help="one distillation run per loss kind vs baseline")
    common(p, teacher=True)
    p.add_argument("--losses", help="comma-separated loss kinds (default: all)")

    p = sub.add_parser("ablate", help="temperature and weight sweeps for the channel loss")
    common(p, teacher=True)
    p.add_argument("--grid-T", dest="grid_T", help="comma-separated temperatures")
    p.add_argument("--grid-alpha", dest="grid_alpha", help="comma-separated loss weights")

    p = sub.add_parser("complexity", help="print the per-loss training-cost table")
    p.add_argument("--out", help="output directory")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--p", type=int, default=2)

    p = sub.add_parser("dump-channels",
                       help="dump per-channel spatial distributions of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--count", type=int, default=8, help="number of validation scenes")
    p.add_argument("--temperature", type=float, default=1.0)

    return parser


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "gradcheck": _cmd_gradcheck,
    "train-teacher": _cmd_train_teacher,
    "distill": _cmd_distill,
    "compare": _cmd_compare,
    "ablate": _cmd_ablate,
    "complexity": _cmd_complexity,
    "dump-channels": _cmd_dump_channels,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](parser, args)
    except CwkdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
