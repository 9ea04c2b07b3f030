"""
Command line for the QBS audit toolkit.

Thin layer on top of ``qbs_audit_core.experiment``; commands are
dispatched via ``_COMMAND_TABLE``.

Run::

    qbs-audit attack --dataset adult.csv --schema adult.json --desk-scale
    qbs-audit scan   --dataset adult.csv --schema adult.json --users all
    qbs-audit synth  --dataset adult.csv --schema adult.json --output synth.csv
    qbs-audit game   --report results/report.json --dataset adult.csv \\
                     --schema adult.json --all-mitigations

Exit codes: 0 success, 2 invalid configuration, 3 unusable data.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any, Optional

import numpy as np

from qbs_audit_core.analysis import AttackReport
from qbs_audit_core.config import ATTRIBUTE_RULES, METHODS, ExperimentConfig, load_config
from qbs_audit_core.data import load_csv, load_schema_config, synth_from_marginals, write_csv
from qbs_audit_core.errors import ConfigError, DatasetFormatError, InsufficientDataError
from qbs_audit_core.experiment import replay_report, run_attack, run_scan, write_report
from qbs_audit_core.formatters import format_histogram, format_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

_MITIGATION_FLAGS = (
    "isolating_attributes",
    "shadow_table",
    "noise_when_no_conditions",
    "stats_dynamic_seed",
)

# Each command is a callable: (config, args) -> exit code
Command = Callable[[ExperimentConfig, argparse.Namespace], int]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_attack(config: ExperimentConfig, args: argparse.Namespace) -> int:
    report = run_attack(config)
    write_report(report, config.output)
    print(format_report(report))
    return EXIT_OK


def _cmd_scan(config: ExperimentConfig, args: argparse.Namespace) -> int:
    report = run_scan(config)
    write_report(report, config.output)
    print(format_report(report))
    print(format_histogram(report.histogram))
    return EXIT_OK


def _cmd_synth(config: ExperimentConfig, args: argparse.Namespace) -> int:
    if not config.dataset or not config.schema:
        raise ConfigError("synth needs --dataset and --schema.")
    dataset = load_csv(config.dataset, load_schema_config(config.schema))
    synthetic = synth_from_marginals(dataset, np.random.default_rng(config.master_seed))
    target = Path(config.output)
    if target.suffix.lower() != ".csv":
        target.mkdir(parents=True, exist_ok=True)
        target = target / "synthetic.csv"
    write_csv(synthetic, target)
    print(f"Wrote {synthetic.size} synthetic rows to {target}")
    return EXIT_OK


def _cmd_game(config: ExperimentConfig, args: argparse.Namespace) -> int:
    if not args.report:
        raise ConfigError("game needs --report pointing at a saved report.json.")
    saved = AttackReport.load_json(args.report)
    report = replay_report(saved, config)
    write_report(report, config.output)
    print(format_report(report))
    return EXIT_OK


_COMMAND_TABLE: dict[str, Command] = {
    "attack": _cmd_attack,
    "scan":   _cmd_scan,
    "synth":  _cmd_synth,
    "game":   _cmd_game,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _users(value: str) -> Any:
    if value.strip().lower() == "all":
        return "all"
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'all', got {value!r}") from None
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'all', got {value!r}")
    return number


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", help="CSV file with a header row")
    common.add_argument("--schema", help="JSON schema config: column -> {kind, role}")
    common.add_argument("--config", help="flat JSON experiment config")
    common.add_argument("--desk-scale", action="store_true", help="use the small desk-scale profile")
    common.add_argument("--output", help="output directory (or .csv file for synth)")
    common.add_argument("--seed", dest="master_seed", type=int, help="master seed")
    common.add_argument("--threads", type=int, help="worker threads (default: QBS_AUDIT_THREADS or all cores)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")

    mitigations = common.add_argument_group("mitigations")
    for name in _MITIGATION_FLAGS:
        mitigations.add_argument(f"--{name.replace('_', '-')}", dest=name, action="store_true", default=None)
    mitigations.add_argument("--all-mitigations", action="store_true")
    return common


def _attack_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=METHODS)
    parser.add_argument("--syntax", help="'lim', 'ext' or axes like 'D1,D3'")
    parser.add_argument("--game", choices=("aia", "mia"))
    parser.add_argument("--users", type=_users, help="users per repetition, or 'all'")
    parser.add_argument("--repetitions", type=int)
    parser.add_argument("--attribute-rule", dest="attribute_rule", choices=ATTRIBUTE_RULES)
    parser.add_argument("--known-attributes", dest="known_attributes", type=int, help="attributes the attacker knows")
    parser.add_argument("-m", type=int, dest="m", help="queries per multiset")
    parser.add_argument("--new-per-iter", dest="new_per_iter", type=int)
    parser.add_argument("--iterations", type=int)
    parser.add_argument("-f", type=int, dest="f", help="training shadow instances")
    parser.add_argument("-g", type=int, dest="g", help="validation shadow instances")
    parser.add_argument("--shadow-size", dest="shadow_size", type=int)
    parser.add_argument("--dataset-size", dest="dataset_size", type=int, help="protected dataset size in the game")
    parser.add_argument("--game-repetitions", dest="game_repetitions", type=int)
    parser.add_argument("--population", type=int)
    parser.add_argument("--elite", type=int)
    parser.add_argument("--generations", type=int)
    parser.add_argument("--train-iterations", dest="train_iterations", type=int, help="gradient steps per model fit")
    parser.add_argument("--explain", action="store_true", default=None, help="analyse difference-like queries")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qbs-audit", description="Audit a simulated query-based system.")
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", required=True)
    _attack_arguments(sub.add_parser("attack", parents=[common], help="search for an attack and play the game"))
    _attack_arguments(sub.add_parser("scan", parents=[common], help="per-user vulnerability scan"))
    sub.add_parser("synth", parents=[common], help="write a correlation-free synthetic dataset")
    game = sub.add_parser("game", parents=[common], help="replay a saved attack under new settings")
    game.add_argument("--report", help="report.json written by attack or scan")
    game.add_argument("--game", choices=("aia", "mia"))
    game.add_argument("--game-repetitions", dest="game_repetitions", type=int)
    game.add_argument("--dataset-size", dest="dataset_size", type=int)
    return parser


_NOT_CONFIG = {"command", "config", "desk_scale", "verbose", "all_mitigations", "report"}


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
    if args.all_mitigations:
        overrides.update({name: True for name in _MITIGATION_FLAGS})
    return load_config(args.config, desk_scale=args.desk_scale, overrides=overrides)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr)

    try:
        config = config_from_args(args)
        return _COMMAND_TABLE[args.command](config, args)
    except ConfigError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InsufficientDataError, DatasetFormatError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
