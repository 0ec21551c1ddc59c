"""Command-line entry point for memlab.

Usage: ``memlab <command> [--config PATH] [--key value]...``
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from src.core.config import settings
from src.core.errors import ConfigError
from src.core.logging import get_logger, log_exception, setup_logging
from src.experiments.runner import EXIT_ERROR, parse_config, run_experiment
from src.models.pydantic.experiment import COMMANDS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memlab",
        description="Numerical lab for test-time memorization memory rules",
        epilog="Any further --key value pair overrides the config file.",
    )
    parser.add_argument("command", choices=COMMANDS, help="Experiment to run")
    parser.add_argument("--config", type=Path, default=None, help="Flat JSON config file")
    return parser


def parse_overrides(extra: Sequence[str]) -> Dict[str, str]:
    """Pair up ``--key value`` tokens; ``--key=value`` is accepted too."""
    overrides: Dict[str, str] = {}
    tokens: List[str] = list(extra)
    i = 0
    while i < len(tokens):
        token = tokens[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigError(f"expected --key, got '{token}'")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"flag --{key} needs a value", field=key.replace("-", "_"))
            value = tokens[i + 1]
            i += 2
        overrides[key] = value
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the experiment, return the exit code."""
    setup_logging()
    logger = get_logger(__name__)

    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = parse_overrides(extra)
        overrides["command"] = args.command
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        log_exception(exc, {"field": exc.field})
        print(f"memlab: {exc}", file=sys.stderr)
        return EXIT_ERROR

    logger.info(
        "Starting memlab",
        command=cfg.command,
        environment=settings.environment,
        threads=settings.threads,
    )
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
