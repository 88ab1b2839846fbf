"""Command-line entry point.

Subcommands: generate, train-score, detect, train-disc, sample, analyze,
pipeline, plot. Global flags (--config, --seed, --out, --jobs) are accepted
after any subcommand. Exit codes: 0 success, 2 config error, 3 stage failure.
The SBDC_LAB_THREADS environment variable overrides --jobs; both cap the
BLAS thread count and must be applied before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys

SUBCOMMANDS = ("generate", "train-score", "detect", "train-disc",
               "sample", "analyze", "pipeline", "plot")


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None,
                        help="config file (INI sections or JSON) or preset name")
    common.add_argument("--seed", metavar="U64", type=int, default=None,
                        help="override the run seed")
    common.add_argument("--out", metavar="DIR", default="runs/default",
                        help="run directory for artifacts")
    common.add_argument("--jobs", metavar="N", type=int, default=None,
                        help="cap worker threads (SBDC_LAB_THREADS overrides)")
    parser = argparse.ArgumentParser(
        prog="sbdc-lab",
        description="Label-noise diffusion lab: train, detect, correct, measure.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common],
                       help=f"run the {name} stage" if name != "pipeline"
                       else "run every stage and write the manifest")
    return parser


def _apply_thread_cap(jobs):
    env = os.environ.get("SBDC_LAB_THREADS")
    if env is not None:
        jobs = int(env)
    if jobs is not None and jobs > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(jobs)
    return jobs


def main(argv=None):
    args = _build_parser().parse_args(argv)
    jobs = _apply_thread_cap(args.jobs)

    # heavy imports only after the thread cap is in place
    from .config import ConfigError, load_config
    from .pipeline import StageError, run_pipeline, run_stage

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if jobs is not None:
            cfg.jobs = jobs
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    try:
        if args.command == "pipeline":
            manifest = run_pipeline(cfg, args.out)
            total = sum(s["seconds"] for s in manifest["stages"].values())
            print(f"pipeline complete in {total:.1f}s; manifest at {args.out}/manifest.json")
        else:
            info = run_stage(args.command, cfg, args.out)
            print(f"{args.command} complete in {info['seconds']:.1f}s; "
                  f"wrote {', '.join(info['outputs'])}")
    except StageError as err:
        print(f"stage failure: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
