"""Tests for atomic report writing."""

import pandas as pd
import pytest

from cvlab.core.errors import CVLabError
from cvlab.utils.file_ops import (
    FileOperationError,
    dumps_json,
    safe_read_json,
    safe_write_csv,
    safe_write_json,
)


class TestAtomicWrites:
    """Test the safe_write_* helpers."""

    def test_json_keeps_insertion_order(self, tmp_path):
        """Keys come out in the order they were inserted."""
        path = safe_write_json(tmp_path / "nested" / "report.json", {"b": 1, "a": [0.5, None]})
        text = path.read_text()
        assert text == dumps_json({"b": 1, "a": [0.5, None]})
        assert text.index('"b"') < text.index('"a"')
        assert safe_read_json(path) == {"b": 1, "a": [0.5, None]}

    def test_csv_full_precision(self, tmp_path):
        """Floats survive the round trip exactly."""
        frame = pd.DataFrame({"x": [0.1, 1.0 / 3.0]})
        path = safe_write_csv(tmp_path / "t.csv", frame)
        assert pd.read_csv(path, float_precision="round_trip")["x"].tolist() == [0.1, 1.0 / 3.0]
        assert not list(tmp_path.glob(".*.tmp"))

    def test_unwritable_target(self, tmp_path):
        """A regular file in the way is reported with exit code 1."""
        blocker = tmp_path / "blocker"
        blocker.write_text("x")
        with pytest.raises(FileOperationError) as excinfo:
            safe_write_json(blocker / "report.json", {})
        assert isinstance(excinfo.value, CVLabError)
        assert excinfo.value.exit_code == 1

    def test_unreadable_json(self, tmp_path):
        """Malformed JSON raises FileOperationError."""
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(FileOperationError, match="bad.json"):
            safe_read_json(path)
