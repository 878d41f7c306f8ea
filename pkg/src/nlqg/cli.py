"""``nlqg`` command line.

    nlqg <experiment> [--config FILE] [--out DIR] [--override key=value ...]
    nlqg cosmo {integrate,reconstruct-b,energy-check} [...]
    nlqg run --config FILE            # experiment taken from the file
    nlqg --list-experiments
    nlqg --print-defaults <experiment>
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .config import EXPERIMENTS, ExperimentConfig, build_config, dump_defaults, parse_config, parse_override
from .errors import ConfigError
from .runner import EXIT_VALIDATION, run

COSMO_ALIASES = {
    "integrate": "cosmo-integrate",
    "reconstruct-b": "cosmo-reconstruct-b",
    "energy-check": "energy-check",
}


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--out", help="output directory (default: output.dir, $NLQG_OUT/<experiment>, ./nlqg-runs/<experiment>)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="override a config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlqg", description="Nonlinear quantum / phantom cosmology laboratory")
    parser.add_argument("--version", action="version", version=f"nlqg {__version__}")
    parser.add_argument("--list-experiments", action="store_true", help="list registered experiments and exit")
    parser.add_argument("--print-defaults", metavar="EXPERIMENT", help="print the default config of an experiment and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    _add_run_args(sub.add_parser("run", help="run the experiment named in --config"))
    for name in EXPERIMENTS:
        _add_run_args(sub.add_parser(name, help=f"run the {name} experiment"))
    cosmo = sub.add_parser("cosmo", help="cosmology experiments")
    csub = cosmo.add_subparsers(dest="cosmo_command", required=True)
    for alias in COSMO_ALIASES:
        _add_run_args(csub.add_parser(alias))
    return parser


def _load(args, experiment: str | None) -> ExperimentConfig:
    overrides = dict(parse_override(item) for item in args.override)
    if args.config:
        return parse_config(args.config, experiment, overrides)
    if experiment is None:
        raise ConfigError("`run` needs --config")
    return build_config({}, experiment, overrides=overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.list_experiments:
        print("\n".join(EXPERIMENTS))
        return 0
    if args.print_defaults:
        try:
            print(dump_defaults(args.print_defaults))
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        return 0
    if args.command is None:
        parser.print_help()
        return EXIT_VALIDATION

    if args.command == "cosmo":
        experiment = COSMO_ALIASES[args.cosmo_command]
    elif args.command == "run":
        experiment = None
    else:
        experiment = args.command

    try:
        cfg = _load(args, experiment)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    result = run(cfg, args.out)
    line = {"experiment": cfg.experiment, "status": result.status, "out": str(result.out_dir)}
    print(json.dumps(line))
    if result.exit_code != 0 and "error" in result.details:
        print(f"error: {result.details['error']}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
