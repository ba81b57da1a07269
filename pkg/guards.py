from __future__ import annotations
import functools
import logging
import sys
from errors import ConfigError, PlaytestError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3

def report(exc: Exception) -> None:
    print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)

def exit_codes(func):
    """Subcommand handler returning an exit code; config errors map to 2, other pipeline errors to 3."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            code = func(*args, **kwargs)
        except ConfigError as exc:
            report(exc)
            return EXIT_CONFIG
        except PlaytestError as exc:
            logger.debug("subcommand failed", exc_info=True)
            report(exc)
            return EXIT_PIPELINE
        return EXIT_OK if code is None else code
    return wrapper

def requires(*names: str):
    """Reject a parsed namespace missing any of ``names`` with a ConfigError."""
    def decorate(func):
        @functools.wraps(func)
        def wrapper(args, *rest, **kwargs):
            missing = [n for n in names if getattr(args, n, None) in (None, "")]
            if missing:
                raise ConfigError("missing " + ", ".join("--" + n.replace("_", "-") for n in missing))
            return func(args, *rest, **kwargs)
        return wrapper
    return decorate
