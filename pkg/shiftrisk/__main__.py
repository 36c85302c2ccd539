"""Command-line entry point for the shifted-risk experiments."""
from __future__ import annotations

import argparse
import logging
import sys

from .cli import COMMANDS, EXIT_CONFIG, run_command
from .config import ConfigError, load_config

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser with one subcommand per experiment."""
    parser = argparse.ArgumentParser(prog="shiftrisk")
    parser.add_argument(
        "-d",
        "--debug",
        action="store_true",
        help="sets the log level to debug",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument(
            "--config",
            metavar="<path>",
            help="experiment YAML file (defaults apply when omitted)",
        )
        sub.add_argument(
            "--out",
            metavar="<dir>",
            help="output directory (overrides experiment.output)",
        )
        sub.add_argument(
            "--seed",
            type=int,
            metavar="<u64>",
            help="seed for sampling, model initialisation and training",
        )
        sub.add_argument(
            "--workers",
            type=int,
            default=1,
            metavar="<n>",
            help="threads for independent trials and runs",
        )
        sub.add_argument(
            "-d",
            "--debug",
            action="store_true",
            default=argparse.SUPPRESS,
            help="sets the log level to debug",
        )
        if name == "train":
            sub.add_argument("--strategy", choices=("standard", "ours"))
            sub.add_argument("--lambda", dest="lam", type=float, metavar="<lambda>")
        if name == "ablate-lambda":
            sub.add_argument("--lambdas", type=float, nargs="+", metavar="<lambda>")
            sub.add_argument("--seeds", type=int, metavar="<n>")
    return parser


def main(argv: list[str] | None = None) -> int:
    """Main program."""
    args = build_parser().parse_args(argv)

    LOG_LEVEL = logging.DEBUG if args.debug else logging.INFO
    logging.basicConfig(
        level=LOG_LEVEL,
        format="%(asctime)-15s %(name)-8s %(levelname)s: %(message)s",
    )

    try:
        config = load_config(args.config)
    except ConfigError as err:
        logger.error("Configuration error: %s", err)
        return EXIT_CONFIG

    seed = config.train.seed
    if args.seed is not None:
        seed = args.seed
        config.train.seed = args.seed
        config.model.seed = args.seed
    if args.out:
        config.experiment.output = args.out
    options: dict = {"seed": seed, "workers": args.workers}
    if args.command == "train":
        if args.strategy:
            config.train.strategy = args.strategy
        if args.lam is not None:
            if not 0.0 <= args.lam <= 1.0:
                logger.error("Configuration error: --lambda must lie in [0, 1], got %s", args.lam)
                return EXIT_CONFIG
            config.train.lam = args.lam
    if args.command == "ablate-lambda":
        if args.lambdas and any(not 0.0 <= lam <= 1.0 for lam in args.lambdas):
            logger.error("Configuration error: --lambdas must lie in [0, 1], got %s", args.lambdas)
            return EXIT_CONFIG
        options.update(lambdas=args.lambdas, seeds=args.seeds)

    logger.info("running %s into %s", args.command, config.experiment.output)
    return run_command(args.command, config, config.experiment.output, **options)


if __name__ == "__main__":
    sys.exit(main())
