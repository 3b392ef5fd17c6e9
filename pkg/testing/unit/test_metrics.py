"""
Unit tests for the JSON-lines metric log.
"""

import json
import os
import shutil
import tempfile

import pytest

from scripts.training.metrics import MetricLog, MetricRecord
from src.utils.common.exceptions import DataFormatError, ValidationError


def _record(epoch, step, loss=1.0, wall_time=0.5):
    return MetricRecord(
        epoch=epoch,
        step=step,
        g_loss=loss,
        d_loss=-loss,
        divergence=loss,
        penalty=0.1 * loss,
        wall_time=wall_time,
    )


class TestMetricLog:
    """Test cases for MetricLog."""

    def setup_method(self):
        """Setup test fixtures."""
        self.temp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.temp_dir, "metrics.jsonl")

    def teardown_method(self):
        """Cleanup test fixtures."""
        shutil.rmtree(self.temp_dir)

    def test_append_writes_one_line_per_record(self):
        """Test that every append is flushed as a JSON line."""
        log = MetricLog(self.path)
        log.append(_record(1, 1))
        log.append(_record(1, 2))

        with open(self.path, encoding="utf-8") as f:
            lines = [json.loads(line) for line in f]
        assert [line["step"] for line in lines] == [1, 2]
        assert set(lines[0]) == {
            "epoch",
            "step",
            "g_loss",
            "d_loss",
            "divergence",
            "penalty",
            "wall_time",
        }

    def test_reopen_reads_existing_records(self):
        """Test that a new MetricLog picks up what an earlier one wrote."""
        first = MetricLog(self.path)
        first.append(_record(1, 1, loss=2.0))
        first.append(_record(2, 2, loss=3.0))

        second = MetricLog(self.path)
        assert len(second) == 2
        assert second.last == _record(2, 2, loss=3.0)

    @pytest.mark.parametrize("epoch,step", [(1, 2), (1, 1), (0, 3)])
    def test_out_of_order_append_is_rejected(self, epoch, step):
        """Test that steps must increase and epochs must not decrease."""
        log = MetricLog(self.path)
        log.append(_record(1, 2))
        with pytest.raises(ValidationError):
            log.append(_record(epoch, step))
        assert len(log) == 1

    def test_truncate_after(self):
        """Test that records past a resume point are dropped on disk too."""
        log = MetricLog(self.path)
        for step in range(1, 6):
            log.append(_record(1 + (step - 1) // 2, step))

        dropped = log.truncate_after(3)

        assert dropped == 2
        assert [r.step for r in log.records] == [1, 2, 3]
        assert [r.step for r in MetricLog(self.path).records] == [1, 2, 3]
        assert not os.path.exists(self.path + ".tmp")
        log.append(_record(2, 4))
        assert log.last.step == 4

    def test_truncate_after_nothing_to_drop(self):
        """Test that truncating past the end is a no-op."""
        log = MetricLog(self.path)
        log.append(_record(1, 1))
        assert log.truncate_after(10) == 0
        assert len(log) == 1

    def test_malformed_line(self):
        """Test that a corrupted metric log raises DataFormatError."""
        with open(self.path, "w", encoding="utf-8") as f:
            f.write(json.dumps(_record(1, 1).to_dict()) + "\n")
            f.write("{not json\n")
        with pytest.raises(DataFormatError, match="line 2"):
            MetricLog(self.path)

    def test_unexpected_field(self):
        """Test that a record with foreign fields is rejected."""
        with open(self.path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"epoch": 1, "step": 1, "accuracy": 0.5}) + "\n")
        with pytest.raises(DataFormatError):
            MetricLog(self.path)

    def test_to_frame_and_epoch_summary(self):
        """Test the pandas views of the log."""
        log = MetricLog(self.path)
        log.append(_record(1, 1, loss=1.0))
        log.append(_record(1, 2, loss=3.0))
        log.append(_record(2, 3, loss=5.0))

        frame = log.to_frame()
        assert list(frame.columns) == list(MetricRecord.__dataclass_fields__)
        assert len(frame) == 3

        summary = log.epoch_summary()
        assert list(summary.index) == [1, 2]
        assert "wall_time" not in summary.columns
        assert summary.loc[1, "g_loss"] == pytest.approx(2.0)
        assert summary.loc[2, "d_loss"] == pytest.approx(-5.0)

    def test_empty_log_views(self):
        """Test that an empty log yields empty frames."""
        log = MetricLog(self.path)
        assert log.last is None
        assert log.to_frame().empty
        assert log.epoch_summary().empty


class TestMetricRecord:
    """Test cases for MetricRecord."""

    def test_deterministic_view_drops_wall_time(self):
        """Test that clock-dependent fields are excluded from comparisons."""
        fast = _record(1, 1, wall_time=0.1)
        slow = _record(1, 1, wall_time=9.0)
        assert fast != slow
        assert fast.deterministic() == slow.deterministic()
        assert "wall_time" not in fast.deterministic()
