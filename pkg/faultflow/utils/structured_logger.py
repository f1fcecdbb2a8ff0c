"""
Structured logging with run context
"""
import json
import sys
from typing import Any, Dict

from loguru import logger

from faultflow.config import settings

_HUMAN_FORMAT = (
    "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan> - <level>{message}</level>"
)


def _serialize(record: Dict[str, Any]) -> str:
    """Serialize log record to JSON"""
    subset = {
        "timestamp": record["time"].isoformat(),
        "level": record["level"].name,
        "message": record["message"],
        "module": record["name"],
        "function": record["function"],
        "line": record["line"],
    }
    extra = {k: v for k, v in record["extra"].items() if k != "serialized"}
    if extra:
        subset["extra"] = extra
    return json.dumps(subset, default=str)


def _patching(record):
    record["extra"]["serialized"] = _serialize(record)


def setup_logging(level: str = None, json_output: bool = None) -> None:
    """
    Install the stderr sink

    Args:
        level: Log level name, defaults to settings.LOG_LEVEL
        json_output: Emit one JSON object per line instead of the human format
    """
    level = (level or settings.LOG_LEVEL).upper()
    json_output = settings.LOG_JSON if json_output is None else json_output

    logger.remove()
    if json_output:
        logger.configure(patcher=_patching)
        logger.add(sys.stderr, format="{extra[serialized]}", level=level)
    else:
        logger.configure(patcher=lambda record: None)
        logger.add(sys.stderr, format=_HUMAN_FORMAT, level=level)


def log_with_context(level: str, message: str, **context):
    """
    Log message with run context

    Args:
        level: Log level (info, warning, error, etc.)
        message: Log message
        **context: Fields bound to the record (command, config_hash, seed, ...)
    """
    log_func = getattr(logger.bind(**context), level.lower())
    log_func(message)
