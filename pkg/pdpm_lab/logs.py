"""
Logging setup for the lab. Everything diagnostic goes to stderr with a short
prefix so stdout stays free for tables and paths.
"""

import logging
import sys

PREFIX = "[pdpm]"


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Install a single stderr handler on the root logger."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(f"{PREFIX} %(levelname)s %(message)s"))

    root = logging.getLogger()
    for old in list(root.handlers):
        root.removeHandler(old)
    root.addHandler(handler)
    root.setLevel(level)

    # matplotlib is chatty at DEBUG about font discovery
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
