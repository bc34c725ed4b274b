"""Command-line interface.

Subcommands: ``compress`` a model described by a manifest, ``estimate-sigma``
from patch files, ``plan-ranks`` for a single kernel, and ``verify`` a
previously written report.  Exit codes: 0 success, 2 validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import npyio, pipeline, rank_select
from .covariance import estimate_sigma
from .errors import NumericalError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigma-lowrank")
    sub = parser.add_subparsers(dest="command", required=True)

    comp = sub.add_parser("compress", help="compress every layer in a manifest")
    comp.add_argument("--manifest", required=True)
    comp.add_argument("--method", choices=["cp", "tucker2", "svd"], default="cp")
    comp.add_argument("--norm", choices=["frobenius", "sigma"], default="frobenius")
    comp.add_argument("--alpha", type=float, default=1.0)
    comp.add_argument("--epsilon", type=float, default=1e-6)
    comp.add_argument("--sweeps", type=int, default=50)
    comp.add_argument("--tol", type=float, default=1e-6)
    comp.add_argument("--seed", type=int, default=None)
    comp.add_argument("--out", required=True)
    comp.add_argument("--report", default=None, help="report path (default OUT/report.json)")
    comp.add_argument("--jobs", type=int, default=1)

    est = sub.add_parser("estimate-sigma", help="accumulate patch files into a covariance")
    est.add_argument("--patches", nargs="+", required=True)
    est.add_argument("--out", required=True)
    est.add_argument("--normalization", choices=["mean", "sum"], default="mean")

    plan = sub.add_parser("plan-ranks", help="print the planned ranks for a kernel")
    plan.add_argument("--kernel", required=True)
    plan.add_argument("--method", choices=["cp", "tucker2", "svd"], required=True)
    plan.add_argument("--alpha", type=float, default=1.0)

    ver = sub.add_parser("verify", help="re-check a report against its factor files")
    ver.add_argument("--report", required=True)
    return parser


def _cmd_compress(args) -> int:
    manifest = pipeline.load_manifest(args.manifest)
    cfg = pipeline.CompressConfig(
        method=args.method,
        norm=args.norm,
        alpha=args.alpha,
        epsilon=args.epsilon,
        sweeps=args.sweeps,
        tol=args.tol,
        seed=args.seed,
        out_dir=args.out,
        jobs=args.jobs,
    )
    report_path = Path(args.report) if args.report else Path(args.out) / "report.json"
    try:
        report = pipeline.compress_model(manifest, cfg)
    except pipeline.CompressionError as exc:
        _relocate_factor_paths(exc.partial_report, Path(args.out), report_path)
        _write_report(report_path, exc.partial_report)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _relocate_factor_paths(report, Path(args.out), report_path)
    _write_report(report_path, report)
    totals = report["totals"]
    print(
        f"compressed {manifest.model}: ratio {totals['compression_ratio']:.4g} "
        f"({totals['original_params']} -> {totals['compressed_params']} params), "
        f"report {report_path}"
    )
    return EXIT_OK


def _write_report(path: Path, report: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2) + "\n")


def _relocate_factor_paths(report: dict, out_dir: Path, report_path: Path) -> None:
    """Factor-file paths in a report are relative to the report file; when
    the report is written outside the output directory, rewrite them."""
    if report_path.parent.resolve() == out_dir.resolve():
        return
    for entry in report.get("layers", []):
        files = entry.get("factor_files")
        if files:
            entry["factor_files"] = {
                tag: os.path.relpath(out_dir / rel, report_path.parent)
                for tag, rel in files.items()
            }


def _cmd_estimate_sigma(args) -> int:
    batches = (npyio.read_tensor(p) for p in args.patches)
    acc = estimate_sigma(batches, normalization=args.normalization)
    npyio.write_tensor(args.out, acc.finalize(args.normalization))
    print(f"sigma ({acc.dim}x{acc.dim}, {acc.count} patches) -> {args.out}")
    return EXIT_OK


def _cmd_plan_ranks(args) -> int:
    kernel = npyio.read_tensor(args.kernel)
    plan = rank_select.plan_ranks(kernel, args.method, args.alpha)
    if args.method == "tucker2":
        print(json.dumps({"R_T": plan.ranks[0], "R_S": plan.ranks[1]}))
    else:
        print(json.dumps({"R": plan.ranks[0]}))
    return EXIT_OK


def _cmd_verify(args) -> int:
    problems = pipeline.verify_report(args.report)
    if problems:
        for p in problems:
            print(f"mismatch: {p}", file=sys.stderr)
        return EXIT_NUMERICAL
    print("report verified")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "compress": _cmd_compress,
        "estimate-sigma": _cmd_estimate_sigma,
        "plan-ranks": _cmd_plan_ranks,
        "verify": _cmd_verify,
    }
    try:
        return handlers[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
