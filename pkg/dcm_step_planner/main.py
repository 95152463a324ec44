"""
Main entry point for the DCM step planner.
Parses the command line, configures logging and runs the selected command.
"""
import logging
import sys
from typing import List, Optional

from . import cli
from .config_manager import ConfigError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
    """Configure root logging; data files never receive log output."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Run the planner command line and return the exit code."""
    args = cli.build_parser().parse_args(argv)
    setup_logging(args.log_level or "INFO", args.log_file)
    try:
        config = cli.load_config(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return cli.EXIT_CONFIG_ERROR
    logging.getLogger().setLevel(getattr(logging, config.log_level, logging.INFO))
    return cli.dispatch(args, config)


if __name__ == "__main__":
    sys.exit(main())
