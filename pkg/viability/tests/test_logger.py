import logging
import os

import pytest

from logger import LOG_LEVEL_ENV, NullLogger, PrintLogger, configure_logger, log_section, resolve_log_level


class RecordingLogger(PrintLogger):
    def __init__(self):
        super().__init__(level=logging.DEBUG)
        self.lines = []

    def log(self, level, msg):
        self.lines.append((logging.getLevelName(level), msg))


def test_log_level_comes_from_the_environment(monkeypatch):
    monkeypatch.delenv(LOG_LEVEL_ENV, raising=False)
    assert resolve_log_level() == logging.INFO
    monkeypatch.setenv(LOG_LEVEL_ENV, " debug ")
    assert resolve_log_level() == logging.DEBUG
    monkeypatch.setenv(LOG_LEVEL_ENV, "chatty")
    assert resolve_log_level(logging.WARNING) == logging.WARNING


def test_print_logger_filters_by_level(monkeypatch, capsys):
    monkeypatch.setenv(LOG_LEVEL_ENV, "WARNING")
    logger = PrintLogger()
    logger.info("hidden")
    logger.warning("kept %d", 3)
    logger.error("also kept")
    assert capsys.readouterr().out.splitlines() == ["WARNING: kept 3", "ERROR: also kept"]


def test_null_logger_is_silent(capsys):
    logger = NullLogger()
    for method in (logger.debug, logger.info, logger.warning, logger.error):
        method("nothing %s", "here")
    assert capsys.readouterr() == ("", "")


def test_section_frames_its_block():
    logger = RecordingLogger()
    with log_section("LEARN", logger):
        logger.info("inside")
    assert logger.lines[0] == ("INFO", "[LEARN] start")
    assert logger.lines[1] == ("INFO", "inside")
    assert logger.lines[2][1].startswith("[LEARN] done in ")


def test_section_reports_failures_and_reraises():
    logger = RecordingLogger()
    with pytest.raises(KeyError):
        with log_section("SWEEP", logger):
            raise KeyError("seed")
    level, msg = logger.lines[-1]
    assert level == "ERROR"
    assert msg.startswith("[SWEEP] failed after ") and msg.endswith("KeyError")


def test_configured_file_logger(tmp_path, monkeypatch):
    monkeypatch.setenv(LOG_LEVEL_ENV, "ERROR")
    path = os.path.join(tmp_path, "logs", "run.log")
    logger = configure_logger(path)
    logger.info("dropped")
    logger.error("written")
    assert len(configure_logger(path).handlers) == 1
    for handler in logger.handlers:
        handler.flush()
    with open(path) as f:
        text = f.read()
    assert "ERROR - written" in text
    assert "dropped" not in text
