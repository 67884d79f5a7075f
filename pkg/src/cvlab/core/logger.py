"""
Logging Infrastructure
======================

Structured logging for cvlab. Library modules log key-value events through
structlog; the stdlib root logger decides where they go (stderr console, an
optional rotating file). Console output defaults to stderr so that JSON
written on stdout by the CLI stays machine-readable.
"""

import json
import logging
import logging.handlers
import sys
from contextvars import ContextVar
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import structlog

# Identifier of the current CLI invocation, attached to every record
run_id: ContextVar[Optional[str]] = ContextVar("run_id", default=None)

_RESERVED_ATTRS = {
    "name", "msg", "args", "levelname", "levelno", "pathname", "filename",
    "module", "exc_info", "exc_text", "stack_info", "lineno", "funcName",
    "created", "msecs", "relativeCreated", "thread", "threadName",
    "processName", "process", "getMessage", "taskName", "message",
}


class JSONFormatter(logging.Formatter):
    """
    JSON formatter for stdlib records.

    Records produced by structlog already carry a rendered JSON message; it
    is merged into the entry rather than nested as a string.
    """

    def __init__(self, include_extra: bool = True):
        super().__init__()
        self.include_extra = include_extra

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as JSON."""
        log_entry: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
        }

        message = record.getMessage()
        try:
            payload = json.loads(message)
        except (TypeError, ValueError):
            payload = None
        if isinstance(payload, dict):
            log_entry.update(payload)
        else:
            log_entry["message"] = message

        current_run = run_id.get()
        if current_run:
            log_entry["run_id"] = current_run

        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)

        if self.include_extra:
            for key, value in record.__dict__.items():
                if key in _RESERVED_ATTRS or key.startswith("_"):
                    continue
                try:
                    json.dumps(value)
                    log_entry[key] = value
                except (TypeError, ValueError):
                    log_entry[key] = str(value)

        return json.dumps(log_entry)


class ColoredFormatter(logging.Formatter):
    """
    Coloured console formatter for interactive use.
    """

    COLORS = {
        "DEBUG": "\033[36m",
        "INFO": "\033[32m",
        "WARNING": "\033[33m",
        "ERROR": "\033[31m",
        "CRITICAL": "\033[35m",
    }
    RESET = "\033[0m"

    def __init__(self, use_colors: bool = True):
        super().__init__()
        self.use_colors = use_colors

    def format(self, record: logging.LogRecord) -> str:
        """Format log record with colors."""
        timestamp = datetime.fromtimestamp(record.created).strftime("%Y-%m-%d %H:%M:%S")
        message = record.getMessage()
        current_run = run_id.get()
        run_str = f" [{current_run}]" if current_run else ""

        if self.use_colors and sys.stderr.isatty():
            color = self.COLORS.get(record.levelname, "")
            formatted = (
                f"{timestamp} {color}{record.levelname:8}{self.RESET} "
                f"{record.name}{run_str} - {message}"
            )
        else:
            formatted = f"{timestamp} {record.levelname:8} {record.name}{run_str} - {message}"

        if record.exc_info:
            formatted += "\n" + self.formatException(record.exc_info)
        return formatted


class LoggerManager:
    """
    Central logging configuration.

    Owns the root handlers and the structlog processor chain.
    """

    def __init__(self):
        self._configured = False
        self._handlers: List[logging.Handler] = []

    @property
    def configured(self) -> bool:
        return self._configured

    def configure(
        self,
        level: str = "WARNING",
        format_type: str = "simple",
        log_file: Optional[str] = None,
        log_dir: str = "./logs",
        max_bytes: int = 10 * 1024 * 1024,
        backup_count: int = 5,
        console_output: bool = True,
        use_colors: bool = True,
    ) -> None:
        """
        Configure logging.

        Args:
            level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
            format_type: 'structured' (JSON lines) or 'simple' (human readable)
            log_file: Log file name inside ``log_dir`` (optional)
            log_dir: Directory for log files
            max_bytes: Rotation size of the log file
            backup_count: Number of rotated files kept
            console_output: Whether to log to stderr
            use_colors: Whether to colour console output
        """
        numeric_level = getattr(logging, level.upper())
        root_logger = logging.getLogger()
        root_logger.setLevel(numeric_level)

        # only handlers installed here are replaced
        for handler in self._handlers:
            root_logger.removeHandler(handler)
            handler.close()
        self._handlers = []

        if console_output:
            console_handler = logging.StreamHandler(sys.stderr)
            if format_type == "structured":
                console_handler.setFormatter(JSONFormatter())
            else:
                console_handler.setFormatter(ColoredFormatter(use_colors=use_colors))
            console_handler.setLevel(numeric_level)
            root_logger.addHandler(console_handler)
            self._handlers.append(console_handler)

        if log_file:
            log_path = Path(log_dir)
            log_path.mkdir(parents=True, exist_ok=True)
            file_handler = logging.handlers.RotatingFileHandler(
                filename=log_path / log_file,
                maxBytes=max_bytes,
                backupCount=backup_count,
                encoding="utf-8",
            )
            if format_type == "structured":
                file_handler.setFormatter(JSONFormatter())
            else:
                file_handler.setFormatter(ColoredFormatter(use_colors=False))
            file_handler.setLevel(numeric_level)
            root_logger.addHandler(file_handler)
            self._handlers.append(file_handler)

        renderer = (
            structlog.processors.JSONRenderer(sort_keys=True)
            if format_type == "structured"
            else structlog.dev.ConsoleRenderer(colors=False)
        )
        structlog.configure(
            processors=[
                structlog.stdlib.filter_by_level,
                structlog.stdlib.add_logger_name,
                structlog.processors.StackInfoRenderer(),
                structlog.processors.format_exc_info,
                structlog.processors.UnicodeDecoder(),
                renderer,
            ],
            context_class=dict,
            logger_factory=structlog.stdlib.LoggerFactory(),
            wrapper_class=structlog.stdlib.BoundLogger,
            cache_logger_on_first_use=False,
        )
        self._configured = True

    def set_run_id(self, value: str) -> None:
        run_id.set(value)

    def clear_run_id(self) -> None:
        run_id.set(None)


# Global logger manager instance
_logger_manager: Optional[LoggerManager] = None


def get_logger_manager() -> LoggerManager:
    """Get the global logger manager instance."""
    global _logger_manager
    if _logger_manager is None:
        _logger_manager = LoggerManager()
    return _logger_manager


def configure_logging(
    level: str = "WARNING",
    format_type: str = "simple",
    log_file: Optional[str] = None,
    log_dir: str = "./logs",
    console_output: bool = True,
    use_colors: bool = True,
) -> None:
    """Configure the global logging system."""
    get_logger_manager().configure(
        level=level,
        format_type=format_type,
        log_file=log_file,
        log_dir=log_dir,
        console_output=console_output,
        use_colors=use_colors,
    )


def get_logger(name: str) -> Any:
    """
    Get a structlog logger bound to ``name``.

    Usage::

        logger = get_logger(__name__)
        logger.info("experiment finished", replicates=1000, failures=0)
    """
    return structlog.stdlib.get_logger(name)


def set_run_id(value: str) -> None:
    """Attach a run identifier to subsequent log records."""
    get_logger_manager().set_run_id(value)


def clear_run_id() -> None:
    """Remove the run identifier."""
    get_logger_manager().clear_run_id()
