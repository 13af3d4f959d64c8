"""Command-line surface: simulate, train, despeckle, eval, gradcheck."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as sdio
from .diffusion import run_diffusion
from .metrics import TABLE_HEADER, compute_report, table_row
from .speckle import NoisyPair, SpeckleConfig, sample_speckle
from .training import TrainConfig, finite_diff_check, init_model, train

logger = logging.getLogger("specklediff")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="specklediff",
        description="Trained nonlinear diffusion filtering for speckle removal")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="add multiplicative speckle")
    sim.add_argument("--input", required=True)
    sim.add_argument("--output", required=True)
    sim.add_argument("--looks", type=int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--peak", type=float, default=255.0)

    tr = sub.add_parser("train", help="train a diffusion model")
    tr.add_argument("--data", required=True, help="directory of clean images")
    tr.add_argument("--model", required=True, help="output model path")
    tr.add_argument("--looks", type=int, default=1)
    tr.add_argument("--stages", type=int, default=5)
    tr.add_argument("--filter-size", type=int, default=3)
    tr.add_argument("--num-filters", type=int, default=None)
    tr.add_argument("--rbf-count", type=int, default=63)
    tr.add_argument("--value-range", type=float, default=255.0)
    tr.add_argument("--patch-size", type=int, default=64)
    tr.add_argument("--patches-per-image", type=int, default=1)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--iters", type=int, default=200)
    tr.add_argument("--schedule", choices=["greedy", "joint", "both"],
                    default="both")
    tr.add_argument("--variant", choices=["prox", "projected"],
                    default="prox")
    tr.add_argument("--floor", type=float, default=1.0)
    tr.add_argument("--gradient-check", action="store_true")
    tr.add_argument("--log", default=None, help="training log file")

    de = sub.add_parser("despeckle", help="run a trained model")
    de.add_argument("--model", required=True)
    de.add_argument("--input", required=True)
    de.add_argument("--output", required=True)
    de.add_argument("--looks", type=int, default=None,
                    help="looks of the input, to warn on mismatch")
    de.add_argument("--peak", type=float, default=255.0)

    ev = sub.add_parser("eval", help="metric table for despeckled images")
    ev.add_argument("--input", required=True, help="despeckled image")
    ev.add_argument("--reference", default=None, help="clean reference")
    ev.add_argument("--noisy", default=None, help="noisy observation")
    ev.add_argument("--looks", type=int, default=None)
    ev.add_argument("--peak", type=float, default=255.0)
    ev.add_argument("--report", default=None, help="write table here")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--looks", type=int, default=4)
    gc.add_argument("--stages", type=int, default=2)
    gc.add_argument("--filter-size", type=int, default=3)
    gc.add_argument("--num-filters", type=int, default=None)
    gc.add_argument("--rbf-count", type=int, default=5)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--variant", choices=["prox", "projected"],
                    default="prox")
    gc.add_argument("--tolerance", type=float, default=1e-4)
    return p


def _cmd_simulate(args) -> int:
    img = sdio.load_image(args.input)
    pair = sample_speckle(img, SpeckleConfig(looks=args.looks, seed=args.seed))
    sdio.save_image(pair.noisy, args.output, peak=args.peak)
    return 0


def _schedule_name(s: str) -> str:
    return {"greedy": "greedy", "joint": "joint",
            "both": "greedy-then-joint"}[s]


def _cmd_train(args) -> int:
    spec = sdio.DatasetSpec(source_dir=args.data, patch_size=args.patch_size,
                            patches_per_image=args.patches_per_image,
                            seed=args.seed)
    pairs, manifest = sdio.build_dataset(
        spec, SpeckleConfig(looks=args.looks, seed=args.seed))
    log_lines = []

    def log_fn(line):
        log_lines.append(line)
        logger.info(line)

    cfg = TrainConfig(samples=pairs, looks=args.looks,
                      stage_count=args.stages, filter_size=args.filter_size,
                      num_filters=args.num_filters, rbf_count=args.rbf_count,
                      value_range=args.value_range,
                      schedule=_schedule_name(args.schedule),
                      optimizer_iters=args.iters, seed=args.seed,
                      gradient_check=args.gradient_check,
                      variant=args.variant, floor=args.floor, log_fn=log_fn)
    model = train(cfg)
    model.metadata["manifest"] = manifest
    sdio.save_model(model, args.model)
    log_path = args.log or (args.model + ".log")
    Path(log_path).write_text("\n".join(log_lines) + "\n")
    return 0


def _cmd_despeckle(args) -> int:
    model = sdio.load_model(args.model)
    if args.looks is not None and args.looks != model.looks:
        logger.warning("model trained for L=%d applied to L=%d input",
                       model.looks, args.looks)
    img = sdio.load_image(args.input)
    out, _ = run_diffusion(img, model)
    sdio.save_image(out, args.output, peak=args.peak)
    return 0


def _cmd_eval(args) -> int:
    test = sdio.load_image(args.input)
    reference = sdio.load_image(args.reference) if args.reference else None
    noisy = sdio.load_image(args.noisy) if args.noisy else None
    report = compute_report(test, reference=reference, noisy=noisy,
                            looks=args.looks, peak=args.peak)
    name = Path(args.input).name
    table = TABLE_HEADER + "\n" + table_row(name, args.looks, report) + "\n"
    if args.report:
        Path(args.report).write_text(table)
    sys.stdout.write(table)
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    clean = rng.uniform(20.0, 235.0, size=(8, 8))
    pair = sample_speckle(clean, SpeckleConfig(looks=args.looks,
                                               seed=args.seed))
    cfg = TrainConfig(samples=[pair], looks=args.looks,
                      stage_count=args.stages, filter_size=args.filter_size,
                      num_filters=args.num_filters, rbf_count=args.rbf_count,
                      seed=args.seed, variant=args.variant)
    model = init_model(cfg)
    report = finite_diff_check(model, pair, tolerance=args.tolerance)
    for group, err in sorted(report.group_errors.items()):
        print(f"group={group} max_rel_error={err:.3g}")
    print(f"overall max_rel_error={report.max_error:.3g} "
          f"tolerance={report.tolerance:g} "
          f"{'PASS' if report.passed else 'FAIL'}")
    return 0 if report.passed else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "despeckle": _cmd_despeckle,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
