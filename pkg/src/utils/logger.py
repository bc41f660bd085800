import logging
import os
import sys
import time
from contextlib import contextmanager
from typing import Iterator, Optional

from pythonjsonlogger import jsonlogger


def _json_formatter() -> jsonlogger.JsonFormatter:
    return jsonlogger.JsonFormatter(
        "%(timestamp)s %(levelname)s %(name)s %(message)s",
        timestamp=True,
        rename_fields={"levelname": "level"},
    )


def setup_logger(name: str, level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """
    Set up a JSON-lines logger; safe to call repeatedly
    """
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, level.upper(), logging.INFO))
    logger.propagate = False

    formatter = _json_formatter()

    # Console handler, stderr only
    if not any(getattr(h, "_gsprop_console", False) for h in logger.handlers):
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        console_handler._gsprop_console = True
        logger.addHandler(console_handler)

    # File handler
    if log_file:
        log_file = os.path.abspath(log_file)
        if not any(getattr(h, "baseFilename", None) == log_file for h in logger.handlers):
            os.makedirs(os.path.dirname(log_file), exist_ok=True)
            file_handler = logging.FileHandler(log_file)
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)

    return logger


@contextmanager
def stage_timer(stage: str, **fields) -> Iterator[dict]:
    """Log start/finish of a pipeline stage with its wall time"""
    from src.monitoring.telemetry import observe_stage

    logger.info("stage_started", extra={"stage": stage, **fields})
    started = time.perf_counter()
    info: dict = {}
    try:
        yield info
    finally:
        elapsed = time.perf_counter() - started
        observe_stage(stage, elapsed)
        logger.info(
            "stage_finished",
            extra={"stage": stage, "elapsed_ms": round(elapsed * 1000.0, 3), **fields, **info},
        )


# Create default logger
logger = setup_logger("gsprop", os.getenv("GSPROP_LOG_LEVEL", "INFO"))
