"""Command-line entry point: ``export`` a model's kernels, patches and
optional weighting tensors into a directory the compression tool accepts."""

from __future__ import annotations

import argparse
import sys


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigma-lowrank-export")
    sub = parser.add_subparsers(dest="command", required=True)
    exp = sub.add_parser("export", help="dump kernels, patches and manifest")
    exp.add_argument("--model", required=True, help="registry name or torchvision model")
    exp.add_argument("--layers", default=None, help="comma-separated layer names (default all)")
    exp.add_argument("--dataset", default="synthetic", help="'synthetic' or an image directory")
    exp.add_argument("--n", type=int, default=64, help="number of sample images")
    exp.add_argument("--resolution", type=int, default=32)
    exp.add_argument("--interp", choices=["bilinear", "bicubic"], default="bilinear")
    exp.add_argument("--out", required=True)
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--batch", type=int, default=16)
    exp.add_argument("--sigma-only", action="store_true",
                     help="store the patch covariance instead of raw patches")
    exp.add_argument("--weights", choices=["fisher", "activation"], default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    from .export import ExportJob, run_export

    job = ExportJob(
        model_id=args.model,
        out_dir=args.out,
        layers=args.layers.split(",") if args.layers else None,
        n=args.n,
        resolution=args.resolution,
        interpolation=args.interp,
        dataset=args.dataset,
        seed=args.seed,
        batch_size=args.batch,
        sigma_only=args.sigma_only,
        weights_kind=args.weights,
    )
    try:
        manifest = run_export(job)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"exported {args.model} -> {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
