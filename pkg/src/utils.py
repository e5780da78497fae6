"""
Logging, progress and process helpers shared by the simulator modules
"""

import logging
import os

import psutil
from tqdm import tqdm

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

PACKAGE_LOGGERS = [
    "GeometryTransform",
    "EllipticSolver",
    "PlateDynamics",
    "StationaryBranch",
    "SpectralVerify",
    "PlateCli",
]

WORKERS_ENV = "MEMS_PLATE_WORKERS"


class TqdmLogHandler(logging.Handler):
    """Writes records through tqdm so log lines do not tear progress bars."""

    def emit(self, record):
        try:
            msg = self.format(record)
            tqdm.write(msg)
        except (OSError, ValueError):
            # Stream closed during interpreter shutdown
            pass


class LoggerManager:
    """Unified logger handler management, one handler for all package loggers"""

    _instance = None
    _handler = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def get_handler(self):
        """Get or create log handler"""
        if self._handler is None:
            handler = TqdmLogHandler()
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            LoggerManager._handler = handler
        return self._handler

    def attach(self, level=logging.INFO):
        handler = self.get_handler()
        for logger_name in PACKAGE_LOGGERS:
            target_logger = logging.getLogger(logger_name)
            target_logger.setLevel(level)
            if handler not in target_logger.handlers:
                target_logger.addHandler(handler)
        return handler

    def cleanup_handler(self):
        """Safely detach the shared handler"""
        handler = self._handler
        if handler is None:
            return
        for logger_name in PACKAGE_LOGGERS:
            target_logger = logging.getLogger(logger_name)
            if handler in target_logger.handlers:
                target_logger.removeHandler(handler)
        LoggerManager._handler = None


def configure_logging(verbose=False):
    return LoggerManager().attach(logging.DEBUG if verbose else logging.INFO)


class PlateProgressBar(tqdm):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("leave", False)
        kwargs.setdefault("dynamic_ncols", True)
        super().__init__(*args, **kwargs)


def progress_bar(total, desc, enabled=False):
    return PlateProgressBar(total=total, desc=desc, disable=not enabled)


def resolve_worker_count(env=None):
    """Sweep parallelism from MEMS_PLATE_WORKERS, else the number of cores."""
    env = os.environ if env is None else env
    raw = env.get(WORKERS_ENV)
    if raw:
        try:
            count = int(raw)
        except ValueError:
            logging.getLogger("PlateCli").warning(
                f"Ignoring {WORKERS_ENV}={raw!r}: not an integer"
            )
        else:
            if count >= 1:
                return count
            logging.getLogger("PlateCli").warning(
                f"Ignoring {WORKERS_ENV}={raw!r}: must be >= 1"
            )
    return psutil.cpu_count(logical=True) or 1
