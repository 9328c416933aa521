"""
UTC logging setup shared by the CLI and the experiment runners.

Console output is colored per level when the stream is a terminal; files never get colors.
Timestamps are ISO-8601 in UTC so logs from parallel sweep workers line up.

Usage (once at startup):
    from covariance_fewshot.logging_config import configure_logging, add_file_logging
    configure_logging()                 # level from CAM_LOG_LEVEL, default INFO
    add_file_logging("sweep.log")       # optional

Then, in every module:
    log = logging.getLogger(__name__)

Environment:
- ``CAM_LOG_LEVEL``: default level name (``DEBUG``, ``INFO``, ...).
- ``NO_COLOR=1`` disables colors, ``FORCE_COLOR=1`` enables them on non-TTY streams.
"""

import logging
import os
import sys
import time
from typing import IO

__all__ = ["configure_logging", "add_file_logging", "level_from_env"]

DEFAULT_FORMAT = "%(asctime)s.%(msecs)03dZ [%(levelname)s] %(name)s: %(message)s"
DEFAULT_DATE_FORMAT = "%Y-%m-%dT%H:%M:%S"
LEVEL_ENV_VAR = "CAM_LOG_LEVEL"

COLORS = {
    "DEBUG": "\033[90m",
    "INFO": "\033[32m",
    "WARNING": "\033[93m",
    "ERROR": "\033[91m",
    "CRITICAL": "\033[97;41m",
    "RESET": "\033[0m",
}


class UtcFormatter(logging.Formatter):
    """
    Formatter that renders record timestamps in UTC.
    """

    @staticmethod
    def _converter(secs: float | None) -> time.struct_time:
        return time.gmtime(0 if secs is None else secs)

    converter = _converter


class ColoredFormatter(UtcFormatter):
    """
    UTC formatter that wraps each message in the ANSI color of its level.
    """

    def __init__(self, format_string: str, date_format: str | None, use_color: bool) -> None:
        super().__init__(fmt=format_string, datefmt=date_format)
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        if not self.use_color:
            return message
        color = COLORS.get(record.levelname, COLORS["RESET"])
        return f"{color}{message}{COLORS['RESET']}"


def _supports_color(stream: IO[str]) -> bool:
    """
    Decide whether ANSI colors should be written to the stream.

    :param stream: Target stream.
    :return: True when colors are forced, or the stream is a TTY on a capable terminal.
    """
    if os.environ.get("FORCE_COLOR"):
        return True
    if os.environ.get("NO_COLOR"):
        return False
    try:
        is_tty = hasattr(stream, "isatty") and stream.isatty()
    except (OSError, ValueError):
        is_tty = False
    return is_tty and os.environ.get("TERM", "") not in ("", "dumb")


def level_from_env(default: int = logging.INFO) -> int:
    """
    Resolve the logging level from ``CAM_LOG_LEVEL``.

    :param default: Level used when the variable is unset or unknown.
    :return: Numeric logging level.
    """
    name = os.environ.get(LEVEL_ENV_VAR, "").strip().upper()
    if not name:
        return default
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else default


def configure_logging(
    level: int | None = None,
    stream: IO[str] = sys.stderr,
    format_string: str = DEFAULT_FORMAT,
    date_format: str = DEFAULT_DATE_FORMAT,
    *,
    replace_handlers: bool = False,
    capture_warnings: bool = True,
) -> None:
    """
    Configure the root logger with one colored UTC stream handler.

    Repeated calls are no-ops unless ``replace_handlers`` is set.

    :param level: Minimum level; None reads ``CAM_LOG_LEVEL`` (default INFO).
    :param stream: Stream to write to (default stderr).
    :param format_string: Record format.
    :param date_format: Timestamp format (UTC).
    :param replace_handlers: Remove existing root handlers first.
    :param capture_warnings: Route the ``warnings`` module through logging.
    :return: None
    """
    root = logging.getLogger()

    if replace_handlers:
        for handler in root.handlers[:]:
            root.removeHandler(handler)
        if hasattr(root, "_cam_logging_configured"):
            delattr(root, "_cam_logging_configured")

    if capture_warnings:
        logging.captureWarnings(True)

    if getattr(root, "_cam_logging_configured", False):
        return

    handler = logging.StreamHandler(stream)
    handler.setLevel(logging.NOTSET)
    handler.setFormatter(ColoredFormatter(format_string, date_format, use_color=_supports_color(stream)))

    root.setLevel(level_from_env() if level is None else level)
    root.addHandler(handler)
    root._cam_logging_configured = True  # type: ignore[attr-defined]


def add_file_logging(
    path: str,
    level: int = logging.DEBUG,
    format_string: str = DEFAULT_FORMAT,
    date_format: str = DEFAULT_DATE_FORMAT,
    encoding: str = "utf-8",
) -> None:
    """
    Attach a plain UTC file handler to the root logger (once per path).

    :param path: Log file path.
    :param level: Minimum level written to the file; lowers the root level if needed.
    :param format_string: Record format.
    :param date_format: Timestamp format (UTC).
    :param encoding: File encoding.
    :return: None
    """
    root = logging.getLogger()
    absolute_path = os.path.abspath(path)

    already_attached = any(
        isinstance(handler, logging.FileHandler) and getattr(handler, "baseFilename", None) == absolute_path
        for handler in root.handlers
    )
    if not already_attached:
        handler = logging.FileHandler(absolute_path, encoding=encoding)
        handler.setLevel(level)
        handler.setFormatter(UtcFormatter(fmt=format_string, datefmt=date_format))
        root.addHandler(handler)

    if root.level > level:
        root.setLevel(level)
