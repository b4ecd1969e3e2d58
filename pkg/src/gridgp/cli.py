"""Command-line interface: generate, contaminate, train, predict, evaluate, reproduce.

Exit codes: 0 success, 2 usage error (argparse), 3 input or parse failure,
4 numerical failure, 5 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .exceptions import NumericalError
from .experiment import (
    PRESETS,
    ExperimentConfig,
    config_from_json,
    run_contaminate,
    run_evaluate,
    run_generate,
    run_predict,
    run_reproduce,
    run_train,
)
from .scenarios import CONTAMINATION_KINDS, ContaminationSpec

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5


def _add_global_flags(parser: argparse.ArgumentParser, defaults: bool) -> None:
    """Global flags, attached to the root and to every subcommand.

    The subcommand copies use SUPPRESS defaults so a flag given after the
    subcommand overrides one given before it, instead of being clobbered
    by the subparser's default.
    """
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    parser.add_argument("--config", default=d(None), help="experiment config JSON")
    parser.add_argument("--seed", type=int, default=d(None), help="override the experiment seed")
    parser.add_argument("--out", default=d("."), help="output directory")
    parser.add_argument("--threads", type=int, default=d(1), help="parallel power-flow solves")
    parser.add_argument(
        "--no-plots",
        action="store_true",
        default=d(False),
        help="write CSV/JSON only, skip figure rendering",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridgp",
        description=(
            "Outlier-robust Gaussian-process emulation of distribution-feeder "
            "power flow: data generation, robust training, prediction, and the "
            "contamination-sweep experiment."
        ),
    )
    _add_global_flags(parser, defaults=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _add_global_flags(p, defaults=False)
        return p

    p = add_command("generate", "simulate scenarios and write train/test datasets")

    p = add_command("contaminate", "inject outliers into a dataset CSV")
    p.add_argument("--data", required=True, help="input dataset CSV")
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--kind", default="vertical", help=f"one of {', '.join(CONTAMINATION_KINDS)}")
    p.add_argument("--magnitude", type=float, default=8.0, help="in robust sd of the channel")
    p.add_argument("--columns", default=None, help="comma-separated input column indices")
    p.add_argument(
        "--manifest", default=None,
        help="manifest to rebuild scenarios from (required for good_leverage)",
    )
    p.add_argument("--which", choices=("train", "test"), default="train")

    p = add_command("train", "fit emulator model(s) on a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--robust", action="store_true", help="train the robust model")
    p.add_argument("--classical", action="store_true", help="train the classical model")

    p = add_command("predict", "predict at the inputs of a dataset CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = add_command("evaluate", "score model(s) against a test dataset CSV")
    p.add_argument("--model", action="append", required=True, help="repeat for a paired report")
    p.add_argument("--data", required=True)

    p = add_command("reproduce", "run a full preset experiment end to end")
    p.add_argument("--preset", default="fig5", help=f"one of {', '.join(sorted(PRESETS))}")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    cfg = config_from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
        if cfg.contamination is not None:
            cfg.contamination = replace(cfg.contamination, seed=args.seed + 3)
    if args.threads != 1:
        cfg = replace(cfg, threads=args.threads)
    cfg.validate()
    return cfg


def _dispatch(args) -> int:
    render = not args.no_plots
    if args.command == "generate":
        cfg = _experiment_config(args)
        files = run_generate(cfg, args.out)
        print(f"wrote {', '.join(sorted(files.values()))} and manifest.json to {args.out}")
    elif args.command == "contaminate":
        columns = None
        if args.columns is not None:
            columns = tuple(int(part) for part in args.columns.split(",") if part != "")
        spec = ContaminationSpec(
            fraction=args.fraction,
            kind=args.kind,
            magnitude=args.magnitude,
            seed=args.seed if args.seed is not None else 0,
            columns=columns,
        )
        data_out, mask_out = run_contaminate(
            args.data, spec, args.out, manifest_path=args.manifest, which=args.which
        )
        print(f"wrote {data_out} and {mask_out}")
    elif args.command == "train":
        if not (args.robust or args.classical):
            print("train: pass --robust and/or --classical", file=sys.stderr)
            return EXIT_USAGE
        cfg = _experiment_config(args)
        for robust in (True, False):
            if (robust and args.robust) or (not robust and args.classical):
                path = run_train(args.data, args.out, robust, cfg, render_plots=render)
                print(f"wrote {path}")
    elif args.command == "predict":
        path = run_predict(args.model, args.data, args.out, render_plots=render)
        print(f"wrote {path}")
    elif args.command == "evaluate":
        path = run_evaluate(args.model, args.data, args.out)
        print(f"wrote {path}")
    elif args.command == "reproduce":
        summary = run_reproduce(args.preset, args.out, threads=args.threads, render_plots=render)
        print(
            f"preset {summary['preset']}: robust median RMSE "
            f"{summary['robust_rmse_median_at_top']:.3e} vs classical "
            f"{summary['classical_rmse_median_at_top']:.3e} at "
            f"{summary['levels_pct'][-1]}% contamination -> {summary['verdict']}"
        )
        return EXIT_OK if summary["verdict"] == "PASS" else EXIT_NUMERICAL
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except NumericalError as exc:
        print(f"gridgp {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"gridgp {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"gridgp {args.command}: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
