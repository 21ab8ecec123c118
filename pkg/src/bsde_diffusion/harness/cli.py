"""Command line for the experiment harness.

Every subcommand reads a flat ``key = value`` config file (unknown keys are
rejected), takes ``--seed`` and ``--workers`` overrides, and writes its CSV
and SVG artifacts plus a ``run.meta`` provenance record into ``--out``.

Exit codes: 0 success, 2 invalid config or arguments, 3 numerical failure
(divergence, non-convergence, or a failed task acceptance check).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..bsde import SolverNumericalError, UnderdeterminedRegression
from ..score_model import TrainingDiverged
from . import pipelines
from .config import ConfigError, apply_schema, load_config

__all__ = ["main", "build_parser"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

_COMMANDS = {
    "train": (pipelines.TRAIN_SCHEMA, pipelines.run_train,
              "train a score model on an analytic target"),
    "sample": (pipelines.SAMPLE_SCHEMA, pipelines.run_sample,
               "reverse-time sampling from a trained checkpoint"),
    "invert": (pipelines.INVERT_SCHEMA, pipelines.run_invert,
               "solve the backward problem for a datum and replay it"),
    "control": (pipelines.CONTROL_SCHEMA, pipelines.run_control,
                "controllable generation over a grid of gains"),
    "uq": (pipelines.UQ_SCHEMA, pipelines.run_uq,
           "uncertainty quantification across independent solves"),
    "bench-lipschitz": (pipelines.BENCH_SCHEMA, pipelines.run_bench,
                        "matched-seed comparison of normalized vs raw training"),
    "solve-bsde": (pipelines.SOLVE_SCHEMA, pipelines.run_solve_bsde,
                   "run a backward solver on an oracle or generative problem"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bsde-diffusion",
        description="BSDE-driven score diffusion experiments",
        epilog="exit codes: 0 success, 2 validation failure, 3 numerical failure",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_text) in _COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=Path, default=None,
                         help="flat key = value config file")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        cmd.add_argument("--workers", type=int, default=None,
                         help="worker count for path generation (output-invariant)")
        cmd.add_argument("--out", type=Path, required=True,
                         help="output directory for artifacts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    schema, runner, _ = _COMMANDS[args.command]
    try:
        raw = load_config(args.config) if args.config is not None else {}
        opts = apply_schema(raw, schema)
        if args.seed is not None:
            opts["seed"] = args.seed
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            opts["workers"] = args.workers
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    out_dir = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return runner(opts, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverNumericalError, TrainingDiverged, UnderdeterminedRegression) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
