##################
## Command-line entry point for Bayesian factor-model selection:
##   simulate    write a synthetic dataset from a true-model JSON spec
##   dim-select  choose the number of factors (Type I selection)
##   check       check that a base pattern identifies the rotation
##   bf2         compare inequality-constrained models (Type II selection)
##   pipeline    all of the above in order
##
## Exit codes: 0 success, 1 usage/parse error, 2 model/identification
## failure, 3 numerical failure.
##################

import argparse
import logging
import sys
from typing import List, Optional

from factor.errors import FactorSelectionError, StageError
from workflow import settings
from workflow.config import (Bf2Config, CheckConfig, DimSelectConfig, PipelineConfig, SimulateConfig, apply_overrides,
                             load_config, validate)
from workflow.pipeline import cmd_bf2, cmd_check, cmd_dim_select, cmd_pipeline, cmd_simulate
from workflow.reports import dimensionality_table, identification_table, type2_table


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON or YAML configuration file.")
    parser.add_argument("--seed", type=int, help="Global seed; overrides the configuration file.")
    parser.add_argument("--out", help="Output location; overrides the configuration file.")
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug-level logging.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Bayesian selection of factor dimensionality and inequality-constrained factor structures.")
    commands = parser.add_subparsers(dest="command")

    simulate = commands.add_parser("simulate", help="Write a synthetic dataset from a true-model spec.")
    simulate.add_argument("--spec", help="True-model JSON file (model, n, seed).")
    _common(simulate)

    dim = commands.add_parser("dim-select", help="Select the number of factors.")
    dim.add_argument("--data", help="CSV dataset.")
    dim.add_argument("--k-max", type=int, help="Largest number of factors to evaluate.")
    _common(dim)

    check = commands.add_parser("check", help="Check identification of a base pattern.")
    check.add_argument("--pattern", help="Pattern grid file.")
    _common(check)

    bf2 = commands.add_parser("bf2", help="Type II Bayes factors for constraint systems.")
    bf2.add_argument("--data", help="CSV dataset.")
    bf2.add_argument("--pattern", help="Base pattern grid file.")
    bf2.add_argument("--constraints", nargs="*", help="Constraint files (.fcs), one per competing model.")
    bf2.add_argument("--draws", help="Draw export of the base model; evaluates masses without sampling.")
    bf2.add_argument("--allow-unidentified", action="store_true", default=None, help="Proceed with a pattern that fails the identification check.")
    bf2.add_argument("--export-draws", action="store_true", default=None, help="Write the base-model draws to draws.csv.")
    _common(bf2)

    pipeline = commands.add_parser("pipeline", help="Run all stages from one configuration file.")
    pipeline.add_argument("--allow-unidentified", action="store_true", default=None)
    pipeline.add_argument("--export-draws", action="store_true", default=None)
    _common(pipeline)
    return parser


def _configure(model, args, **fields):
    """Configuration file (if any) with command-line values on top."""
    if args.config:
        config = load_config(model, args.config)
        return apply_overrides(config, **fields)
    return validate(model, {k: v for k, v in fields.items() if v is not None}, "command line")


def run(args: argparse.Namespace) -> int:
    if args.command == "simulate":
        config = _configure(SimulateConfig, args, spec=args.spec, seed=args.seed, out=args.out)
        data = cmd_simulate(config)
        print(f"Wrote {data.n} observations on {data.p} items")
    elif args.command == "dim-select":
        config = _configure(DimSelectConfig, args, data=args.data, k_max=args.k_max, seed=args.seed, out=args.out)
        report = cmd_dim_select(config)
        print(dimensionality_table(report.selection))
    elif args.command == "check":
        config = _configure(CheckConfig, args, pattern=args.pattern, out=args.out)
        report = cmd_check(config)
        print(identification_table(report))
        return 0 if report.overall else 2
    elif args.command == "bf2":
        config = _configure(Bf2Config, args, data=args.data, pattern=args.pattern, draws=args.draws,
                            constraints=args.constraints,
                            allow_unidentified=args.allow_unidentified, export_draws=args.export_draws,
                            seed=args.seed, out=args.out)
        report = cmd_bf2(config)
        print(type2_table(report.type2))
    elif args.command == "pipeline":
        if not args.config:
            print("pipeline needs --config")
            return 1
        config = _configure(PipelineConfig, args, allow_unidentified=args.allow_unidentified,
                            export_draws=args.export_draws, seed=args.seed, out=args.out)
        report = cmd_pipeline(config)
        print(dimensionality_table(report.dimensionality))
        print()
        print(identification_table(report.identification))
        print()
        print(type2_table(report.type2))
    else:
        build_parser().print_help()
        return 1
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if getattr(args, "verbose", False) else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(message)s")
    try:
        return run(args)
    except StageError as exc:
        logging.error(f"Pipeline aborted in stage '{exc.stage}': {exc.cause}")
        return exc.exit_code
    except FactorSelectionError as exc:
        logging.error(str(exc))
        return exc.exit_code
    except Exception:
        logging.exception("Unexpected failure")
        return 3


if __name__ == "__main__":
    sys.exit(main())
