"""Command-line entry point: ``navseg <subcommand> ...``."""
from __future__ import annotations

import argparse
import contextlib
import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import costmap as cm
from . import metrics
from .exceptions import ConfigError, DataError, ShapeError, SingularSystemError, TapeError
from .gradcheck import gradcheck
from .grouping import grouping_effect, load_group_map, remap
from .head import REDUCTIONS, HeadConfig, head_flops
from .io import (chw_to_image, image_to_chw, read_gtsr, read_pgm, read_ppm, write_gtsr,
                 write_pgm, write_ppm)
from .model import forward, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, TrainingDiverged, make_synth_dataset, train_toy, write_history


class CLIError(Exception):
    pass


@contextlib.contextmanager
def staged_dir(target):
    """Build a directory next to ``target`` and move it into place on success."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    tmp.rename(target)


def _pair(text: str, kind=int) -> tuple:
    try:
        a, b = (kind(v) for v in text.split(","))
    except ValueError:
        raise CLIError(f"expected two comma-separated values, got {text!r}") from None
    return a, b


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: malformed JSON ({exc})") from None


def _pgm_files(directory) -> dict[str, Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise CLIError(f"{directory} is not a directory")
    return {p.name: p for p in sorted(directory.glob("*.pgm"))}


def _paired(pred_dir, gt_dir):
    preds, gts = _pgm_files(pred_dir), _pgm_files(gt_dir)
    common = sorted(set(preds) & set(gts))
    if not common:
        raise CLIError(f"no matching .pgm files in {pred_dir} and {gt_dir}")
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise CLIError(f"no prediction for {missing[0]}")
    return [(name, preds[name], gts[name]) for name in common]


# --- subcommands ------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    rep = gradcheck(seed=args.seed, eps=args.eps, coords_per_tensor=args.coords)
    for line in rep.lines():
        print(line)
    status = "PASS" if rep.passed else "FAIL"
    print(f"{status} worst={rep.worst:.3e} tol={rep.tolerance:g} time={rep.seconds:.1f}s")
    if not rep.passed:
        print("offenders: " + ", ".join(rep.offenders))
    return 0 if rep.passed else 1


def cmd_train(args) -> int:
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    result = train_toy(cfg)
    with staged_dir(args.out) as out:
        write_history(out / "history.jsonl", result.history)
        save_checkpoint(out / "checkpoint", result.params, cfg.model_config(),
                        {"train_config": cfg.to_dict()})
        summary = {
            "iterations": len(result.history),
            "initial_total": result.history[0]["total"] if result.history else None,
            "final_total": result.history[-1]["total"] if result.history else None,
            "final_train_miou": result.final_miou if result.history else None,
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return 0


def cmd_infer(args) -> int:
    params, mcfg = load_checkpoint(args.ckpt)
    image = image_to_chw(read_ppm(args.image))
    h, w = image.shape[-2:]
    if h % 32 or w % 32:
        raise CLIError(f"image size {h}x{w} must be a multiple of 32")
    probs = forward(params, image, mcfg, train_mode=False).probs.data
    write_pgm(args.out, probs.argmax(axis=0).astype(np.uint8))
    if args.probs:
        write_gtsr(args.probs, probs)
    return 0


def cmd_eval(args) -> int:
    gm = load_group_map(args.groups)
    conf = metrics.ConfusionMatrix(gm.n_groups)
    for _, pred_path, gt_path in _paired(args.pred, args.gt):
        gt = read_pgm(gt_path)
        if args.fine_gt:
            gt = remap(gt, gm)
        conf.accumulate(read_pgm(pred_path), gt)
    rep = metrics.report(conf, gm.names)
    if args.out:
        Path(args.out).write_text(metrics.dumps_report(rep))
    if args.json:
        print(metrics.dumps_report(rep))
    else:
        print(metrics.format_table(rep))
    return 0


def cmd_regroup(args) -> int:
    gm = load_group_map(args.groups)
    write_pgm(args.out, remap(read_pgm(args.inp), gm))
    return 0


def cmd_groupeffect(args) -> int:
    gm = load_group_map(args.groups)
    preds, gts = [], []
    for _, pred_path, gt_path in _paired(args.pred, args.gt):
        preds.append(read_pgm(pred_path).ravel())
        gts.append(read_pgm(gt_path).ravel())
    rows = grouping_effect(np.concatenate(preds), np.concatenate(gts), gm)
    if args.json:
        print(json.dumps(rows, indent=2, default=lambda v: None))
        return 0
    print(f"{'group':<12} {'pixels':>8} {'fine_acc':>9} {'group_acc':>9} {'delta':>8}")
    for r in rows:
        if r["pixels"]:
            print(f"{r['group']:<12} {r['pixels']:>8d} {r['fine_acc']:>9.4f} "
                  f"{r['group_acc']:>9.4f} {r['delta']:>8.4f}")
        else:
            print(f"{r['group']:<12} {0:>8d} {'n/a':>9} {'n/a':>9} {'n/a':>8}")
    return 0


def cmd_costmap(args) -> int:
    gm = load_group_map(args.groups)
    hom_cfg = _read_json(args.hom)
    hom = cm.Homography.from_dict(hom_cfg)
    elevation = read_gtsr(args.elev)
    if elevation.ndim != 2:
        raise CLIError(f"elevation grid must be 2-D, got shape {elevation.shape}")
    grid_cfg = hom_cfg.get("grid", {})
    cell = args.cell_size if args.cell_size is not None else float(grid_cfg.get("cell_size", 1.0))
    origin = _pair(args.origin, float) if args.origin else tuple(grid_cfg.get("origin", (0.0, 0.0)))
    spec = cm.GridSpec(elevation.shape[0], elevation.shape[1], cell, origin)
    table = _read_json(args.costs) if args.costs else None
    lookup = cm.cost_lookup(gm, table)
    ground = cm.project_labels(read_pgm(args.pred), hom, spec)
    seg = cm.seg_costmap(ground, lookup)
    total = cm.fuse(seg, cm.elevation_costs(elevation, cell, args.elev_gain))
    grid = cm.CostGrid(total, spec, elevation)
    with staged_dir(args.out) as out:
        grid.save(out)
        write_gtsr(out / "labels.gtsr", ground)
        write_gtsr(out / "seg_costs.gtsr", seg)
    print(json.dumps({"rows": spec.rows, "cols": spec.cols,
                      "unknown_cells": int((ground == cm.UNKNOWN).sum()),
                      "blocked_cells": int(grid.blocked().sum())}))
    return 0


def cmd_plan(args) -> int:
    grid = cm.CostGrid.load(args.grid)
    result = cm.plan(grid, _pair(args.start), _pair(args.goal))
    if result is None:
        print(json.dumps({"found": False}))
        return 3
    report = {"found": True, "cost": result.cost, "cells": len(result.path)}
    if grid.elevation is not None:
        report["roughness_m"] = cm.trajectory_roughness(result.path, grid.elevation)
    labels_path = Path(args.grid) / "labels.gtsr"
    if labels_path.exists():
        gm = load_group_map(args.groups)
        labels = read_gtsr(labels_path).astype(np.int64)
        report["selection_pct"] = cm.trajectory_selection(result.path, labels, gm)
    cm.save_path_csv(args.out, result.path)
    print(json.dumps(report))
    return 0


def cmd_flops(args) -> int:
    base = _read_json(args.config) if args.config else {}
    h, w = _pair(args.hw)
    rows = []
    for r in REDUCTIONS:
        cfg = HeadConfig(**{**base, "reduction": r})
        rows.append((r, head_flops(cfg, h, w)))
    keys = list(rows[0][1])
    print(f"{'r':>3} " + " ".join(f"{k:>14}" for k in keys))
    for r, terms in rows:
        print(f"{r:>3} " + " ".join(f"{terms[k]:>14d}" for k in keys))
    return 0


def cmd_synth(args) -> int:
    h, w = _pair(args.hw)
    samples = make_synth_dataset(args.seed, args.n, h, w, args.n_groups, args.regions)
    with staged_dir(args.out) as out:
        (out / "images").mkdir()
        (out / "labels").mkdir()
        for i, s in enumerate(samples):
            write_ppm(out / "images" / f"{i:04d}.ppm", chw_to_image(s.image))
            write_pgm(out / "labels" / f"{i:04d}.pgm", s.labels)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="navseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=200, help="coordinates per parameter tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="toy training on synthetic data")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict a group map for one PPM image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probs")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="segmentation metrics over matching PGM files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--groups")
    p.add_argument("--fine-gt", action="store_true", help="remap ground truth through --groups")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("regroup", help="map a fine label PGM to groups")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--groups")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_regroup)

    p = sub.add_parser("groupeffect", help="per-group accuracy before/after grouping")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--groups")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_groupeffect)

    p = sub.add_parser("costmap", help="project a prediction into a fused cost grid")
    p.add_argument("--pred", required=True)
    p.add_argument("--hom", required=True)
    p.add_argument("--elev", required=True)
    p.add_argument("--costs")
    p.add_argument("--groups")
    p.add_argument("--cell-size", type=float)
    p.add_argument("--origin")
    p.add_argument("--elev-gain", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_costmap)

    p = sub.add_parser("plan", help="least-cost path on a saved cost grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--start", required=True)
    p.add_argument("--goal", required=True)
    p.add_argument("--groups")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("flops", help="head multiply-adds for r in {8, 16, 32}")
    p.add_argument("--config")
    p.add_argument("--hw", required=True)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--hw", default="64,64")
    p.add_argument("--n-groups", type=int, default=6)
    p.add_argument("--regions", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, ConfigError, DataError, ShapeError, SingularSystemError, TapeError,
            TrainingDiverged, OSError, KeyError, TypeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"navseg {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
