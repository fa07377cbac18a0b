import logging
import os
import sys
import time
from contextlib import contextmanager

LOG_LEVEL_ENV = "VIABILITY_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def resolve_log_level(default=logging.INFO):
    """Read the verbosity from VIABILITY_LOG_LEVEL, falling back to `default`."""
    name = os.environ.get(LOG_LEVEL_ENV, "").strip().upper()
    if not name:
        return default
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else default


def configure_logger(log_filename=None, name="viability"):
    logger = logging.getLogger(log_filename or name)
    level = resolve_log_level()
    logger.setLevel(level)
    logger.propagate = False

    # Clear any existing handlers (in case of repeated calls)
    if logger.handlers:
        logger.handlers.clear()

    if log_filename:
        directory = os.path.dirname(log_filename)
        if directory:
            os.makedirs(directory, exist_ok=True)
        handler = logging.FileHandler(log_filename)
    else:
        handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    return logger


@contextmanager
def log_section(title, logger):
    """Frame a block of log lines with its title and the time it took."""
    started = time.perf_counter()
    logger.info(f"[{title}] start")
    try:
        yield
    except Exception as e:
        logger.error(f"[{title}] failed after {time.perf_counter() - started:.2f}s: {type(e).__name__}")
        raise
    logger.info(f"[{title}] done in {time.perf_counter() - started:.2f}s")


class _ConsoleLogger:
    """Shared surface of the non-`logging` loggers; subclasses implement `log`."""

    def log(self, level, msg):
        raise NotImplementedError

    def debug(self, msg, *args):
        self.log(logging.DEBUG, msg % args if args else msg)

    def info(self, msg, *args):
        self.log(logging.INFO, msg % args if args else msg)

    def warning(self, msg, *args):
        self.log(logging.WARNING, msg % args if args else msg)

    def error(self, msg, *args):
        self.log(logging.ERROR, msg % args if args else msg)


class NullLogger(_ConsoleLogger):
    def log(self, level, msg):
        pass


class PrintLogger(_ConsoleLogger):
    """Print to stdout, honouring VIABILITY_LOG_LEVEL."""

    def __init__(self, level=None):
        self.level = resolve_log_level() if level is None else level

    def log(self, level, msg):
        if level >= self.level:
            print(f"{logging.getLevelName(level)}: {msg}")
