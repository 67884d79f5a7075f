"""
Atomic report writing.

Experiment reports and split plans are written through a temporary file in
the target directory and moved into place, so an interrupted run never
leaves a half-written JSON or CSV behind.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import IO, Any, Optional, Union

import pandas as pd

from ..core.errors import CVLabError
from ..core.logger import get_logger

logger = get_logger(__name__)


class FileOperationError(CVLabError):
    """Raised when a report cannot be read or written."""

    exit_code = 1


class AtomicFileWriter:
    """
    Context manager for atomic file writes.

    Either the whole content reaches ``target_path`` or the previous file (if
    any) is left untouched.
    """

    def __init__(self, target_path: Union[str, Path], mode: str = "w", encoding: str = "utf-8"):
        self.target_path = Path(target_path)
        self.mode = mode
        self.encoding = encoding
        self.temp_file: Optional[IO] = None

    def __enter__(self) -> IO:
        try:
            self.target_path.parent.mkdir(parents=True, exist_ok=True)
            self.temp_file = tempfile.NamedTemporaryFile(
                mode=self.mode,
                encoding=self.encoding if "b" not in self.mode else None,
                dir=self.target_path.parent,
                delete=False,
                prefix=f".{self.target_path.name}.",
                suffix=".tmp",
                newline="" if "b" not in self.mode else None,
            )
        except OSError as e:
            raise FileOperationError(f"cannot write {self.target_path}: {e}") from e
        return self.temp_file

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.temp_file is None:
            return
        self.temp_file.close()
        temp_path = Path(self.temp_file.name)
        try:
            if exc_type is None:
                if os.name == "nt" and self.target_path.exists():
                    self.target_path.unlink()
                temp_path.replace(self.target_path)
                logger.debug("file written", path=str(self.target_path))
            else:
                if temp_path.exists():
                    temp_path.unlink()
                logger.error("file write failed", path=str(self.target_path), error=str(exc_val))
        except OSError as cleanup_error:
            raise FileOperationError(
                f"could not finalize {self.target_path}: {cleanup_error}"
            ) from cleanup_error


def dumps_json(data: Any) -> str:
    """Serialize with a stable layout: insertion order kept, two-space indent."""
    return json.dumps(data, indent=2, ensure_ascii=False, allow_nan=True) + "\n"


def safe_write_json(path: Union[str, Path], data: Any) -> Path:
    """Write ``data`` as JSON atomically."""
    target = Path(path)
    with AtomicFileWriter(target) as handle:
        handle.write(dumps_json(data))
    return target


def safe_write_text(path: Union[str, Path], content: str) -> Path:
    """Write text atomically."""
    target = Path(path)
    with AtomicFileWriter(target) as handle:
        handle.write(content)
    return target


def safe_write_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    """Write a report table atomically; floats keep full precision."""
    target = Path(path)
    with AtomicFileWriter(target) as handle:
        frame.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")
    return target


def safe_read_json(path: Union[str, Path]) -> Any:
    """Read a JSON document, wrapping I/O and decoding failures."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except (OSError, json.JSONDecodeError) as e:
        raise FileOperationError(f"cannot read JSON from {path}: {e}") from e
