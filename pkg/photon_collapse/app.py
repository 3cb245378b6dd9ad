"""CLI entry point for PhotonCollapse."""

import argparse
import logging
import sys

from photon_collapse.core.config import (
    ExperimentConfig,
    ExperimentKind,
    apply_overrides,
    load_config,
)
from photon_collapse.core.presets import preset_config, preset_names
from photon_collapse.core.runner import run

EXIT_FAILED_CHECKS = 2

COMMANDS = {
    "trajectory": ExperimentKind.TRAJECTORY,
    "master": ExperimentKind.MASTER,
    "cross-validate": ExperimentKind.CROSS_VALIDATE,
    "shadow": ExperimentKind.SHADOW,
    "estimate": ExperimentKind.ESTIMATE,
}

# Used when a subcommand is given neither --config nor --preset.
DEFAULT_PRESETS = {
    ExperimentKind.TRAJECTORY: "vacuum-trajectory",
    ExperimentKind.MASTER: "single-cell-dephasing",
    ExperimentKind.CROSS_VALIDATE: "grw-cross-validation",
    ExperimentKind.SHADOW: "dust-grain-shadow",
    ExperimentKind.ESTIMATE: "desk-estimates",
}


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _threads(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"threads must be at least 1, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per experiment type."""
    parser = argparse.ArgumentParser(
        prog="photon-collapse",
        description="PhotonCollapse - Simulate spontaneous collapse models acting on photons",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument("--config", "-c", help="Experiment configuration file (JSON)")
    source.add_argument("--preset", "-p", help="Named experiment preset")
    common.add_argument("--seed", type=_seed, help="Master seed (overrides env and file)")
    common.add_argument("--threads", type=_threads, help="Worker threads (never changes results)")
    common.add_argument("--out", "-o", help="Output directory")
    common.add_argument(
        "--verbose", "-v", action="count", default=0, help="Log INFO (-v) or DEBUG (-vv)"
    )

    subparsers.add_parser(
        "run", parents=[common], help="Run the experiment named in the configuration"
    )
    for name, kind in COMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=f"Run a {kind.value} experiment")
    subparsers.add_parser("presets", help="List the available presets")
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True
    )


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    expected = COMMANDS.get(args.command)
    if args.config:
        config = load_config(args.config)
    elif args.preset:
        config = preset_config(args.preset)
    elif expected is not None:
        config = preset_config(DEFAULT_PRESETS[expected])
    else:
        raise ValueError("either --config or --preset is required")
    if expected is not None and config.experiment is not expected:
        raise ValueError(
            f"configuration describes a '{config.experiment.value}' experiment, "
            f"not '{expected.value}'"
        )
    return apply_overrides(config, seed=args.seed, threads=args.threads, out=args.out)


def main(argv: list[str] | None = None) -> None:
    """Main entry point for the CLI."""
    args = build_parser().parse_args(argv)

    if args.command == "presets":
        for name in preset_names():
            print(name)
        return

    _configure_logging(args.verbose)
    try:
        config = _resolve_config(args)
        print(f"Running {config.experiment.value} experiment (seed {config.seed})")
        manifest = run(config)
        for output in manifest.outputs:
            print(f"Exported {output.name} to {config.output}")
        for check in manifest.checks:
            if check.passed is False:
                print(f"Check failed: {check.name} (value {check.value}, limit {check.limit})")
        print(f"Wrote manifest to {config.output}/manifest.json")
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)

    if not manifest.passed:
        sys.exit(EXIT_FAILED_CHECKS)


if __name__ == "__main__":
    main()
