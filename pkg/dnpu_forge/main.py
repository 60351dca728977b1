import argparse
import logging
import os
import sys
from dataclasses import replace

from dotenv import load_dotenv

from dnpu_forge.experiments.runner import run_experiment
from dnpu_forge.utils.config import LOG_LEVEL_ENV, RunConfig, SelfCheckConfig, load_config
from dnpu_forge.utils.errors import ConfigError, DnpuError
from dnpu_forge.utils.reports import report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def configure_logging(level=None):
    level = (level or os.getenv(LOG_LEVEL_ENV) or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="dnpu-forge", description="Off-chip training experiments for DNPUs")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the experiment described by a YAML config")
    run.add_argument("config", help="path to the run config")
    run.add_argument("--workers", type=int, default=None, help="parallel jobs (results do not depend on it)")

    report = commands.add_parser("report", help="summarize a completed run directory")
    report.add_argument("run_dir", help="run directory holding manifest.json")

    check = commands.add_parser("self-check", help="quick end-to-end check of a synthetic device seed")
    check.add_argument("--seed", type=int, default=None, help="device structure seed")
    check.add_argument("--output-dir", default=None, help="output root for the run directory")
    return parser


def _run(config, workers=None):
    run, success = run_experiment(config, workers)
    print(run.path)
    return EXIT_OK if success else EXIT_FAILURE


def main(argv=None):
    """
    Command-line entry point.

    Returns:
        int: 0 on success, 1 on experiment failure, 2 on config errors
    """
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        if args.command == "run":
            return _run(load_config(args.config), args.workers)
        if args.command == "report":
            print(report(args.run_dir))
            return EXIT_OK
        config = RunConfig(experiment="self-check", output_dir=args.output_dir, self_check=SelfCheckConfig())
        if args.seed is not None:
            config = replace(config, device=replace(config.device, structure_seed=args.seed))
        return _run(config)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except DnpuError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
