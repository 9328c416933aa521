import io
import logging

from covariance_fewshot.logging_config import (
    COLORS,
    ColoredFormatter,
    add_file_logging,
    configure_logging,
    level_from_env,
)

"""
========================================================================================================================
configure_logging
========================================================================================================================
"""


class TestConfigureLogging:
    # Repeated calls add a single handler
    def test_idempotent(self, restore_root_logger, monkeypatch):
        monkeypatch.delenv("CAM_LOG_LEVEL", raising=False)
        configure_logging(replace_handlers=True, stream=io.StringIO())
        count = len(restore_root_logger.handlers)

        configure_logging(stream=io.StringIO())

        assert len(restore_root_logger.handlers) == count == 1
        assert restore_root_logger.level == logging.INFO

    # Records reach the configured stream without colors on a non-terminal
    def test_writes_plain_records(self, restore_root_logger, monkeypatch):
        monkeypatch.delenv("FORCE_COLOR", raising=False)
        stream = io.StringIO()
        configure_logging(logging.DEBUG, stream=stream, replace_handlers=True)

        logging.getLogger("covariance_fewshot.test").info("Cell done shots=4")

        line = stream.getvalue()
        assert "[INFO] covariance_fewshot.test: Cell done shots=4" in line
        assert "\033[" not in line
        assert "Z [" in line

    # FORCE_COLOR wraps records in their level color
    def test_force_color(self, restore_root_logger, monkeypatch):
        monkeypatch.setenv("FORCE_COLOR", "1")
        stream = io.StringIO()
        configure_logging(logging.DEBUG, stream=stream, replace_handlers=True)

        logging.getLogger("covariance_fewshot.test").warning("careful")

        assert stream.getvalue().startswith(COLORS["WARNING"])


"""
========================================================================================================================
level_from_env / add_file_logging / ColoredFormatter
========================================================================================================================
"""


class TestLoggingHelpers:
    # Known names map to levels, unknown names fall back to the default
    def test_level_from_env(self, monkeypatch):
        monkeypatch.setenv("CAM_LOG_LEVEL", "debug")
        assert level_from_env() == logging.DEBUG

        monkeypatch.setenv("CAM_LOG_LEVEL", "chatty")
        assert level_from_env(logging.WARNING) == logging.WARNING

    # One file handler per path; the root level is lowered to reach it
    def test_add_file_logging(self, restore_root_logger, tmp_path):
        restore_root_logger.setLevel(logging.WARNING)
        path = tmp_path / "run.log"

        add_file_logging(str(path))
        add_file_logging(str(path))
        logging.getLogger("covariance_fewshot.test").debug("written")

        file_handlers = [h for h in restore_root_logger.handlers if isinstance(h, logging.FileHandler)]
        assert len([h for h in file_handlers if h.baseFilename == str(path)]) == 1
        assert restore_root_logger.level == logging.DEBUG
        for handler in file_handlers:
            handler.flush()
        assert "written" in path.read_text()

    # Colors only when enabled
    def test_colored_formatter(self):
        record = logging.LogRecord("x", logging.ERROR, __file__, 1, "failed", None, None)

        colored = ColoredFormatter("%(message)s", None, use_color=True).format(record)
        plain = ColoredFormatter("%(message)s", None, use_color=False).format(record)

        assert colored == f"{COLORS['ERROR']}failed{COLORS['RESET']}"
        assert plain == "failed"
