"""Append-only JSON-lines metric log."""

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

import pandas as pd

from src.utils.common.exceptions import DataFormatError, ValidationError
from src.utils.common.logging import get_logger

logger = get_logger(__name__)

# Fields that depend on the clock rather than on (config, seeds).
TIMING_FIELDS = ("wall_time",)


@dataclass
class MetricRecord:
    epoch: int
    step: int
    g_loss: float
    d_loss: float
    divergence: float
    penalty: float
    wall_time: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def deterministic(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if k not in TIMING_FIELDS}


class MetricLog:
    """Per-step training metrics, one JSON object per line.

    Records must arrive with strictly increasing ``step`` and non-decreasing
    ``epoch``; every append is flushed so a crash leaves a readable prefix.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.records: List[MetricRecord] = []
        if self.path.exists():
            self.records = list(self._read())

    def _read(self) -> Iterator[MetricRecord]:
        with open(self.path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    yield MetricRecord(**json.loads(line))
                except (json.JSONDecodeError, TypeError) as exc:
                    raise DataFormatError(
                        f"Metric log {self.path} line {line_no} is malformed",
                        stage="metric_log",
                        data_source=str(self.path),
                    ) from exc

    @property
    def last(self) -> Optional[MetricRecord]:
        return self.records[-1] if self.records else None

    def append(self, record: MetricRecord) -> None:
        last = self.last
        if last is not None and (record.step <= last.step or record.epoch < last.epoch):
            raise ValidationError(
                f"Metric record (epoch {record.epoch}, step {record.step}) does not follow "
                f"(epoch {last.epoch}, step {last.step})",
                field="step",
                value=record.step,
            )
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
            f.flush()
        self.records.append(record)

    def truncate_after(self, step: int) -> int:
        """Drop records past ``step`` (used on resume); returns how many were dropped."""
        kept = [r for r in self.records if r.step <= step]
        dropped = len(self.records) - len(kept)
        if dropped:
            tmp = self.path.with_name(self.path.name + ".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                for r in kept:
                    f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
            os.replace(tmp, self.path)
            logger.info("Dropped %d metric records past step %d", dropped, step)
        self.records = kept
        return dropped

    def to_frame(self) -> pd.DataFrame:
        columns = list(MetricRecord.__dataclass_fields__)
        return pd.DataFrame([r.to_dict() for r in self.records], columns=columns)

    def epoch_summary(self) -> pd.DataFrame:
        """Per-epoch means of every loss column."""
        frame = self.to_frame()
        if frame.empty:
            return frame
        return frame.drop(columns=["step", "wall_time"]).groupby("epoch", as_index=True).mean()

    def __len__(self) -> int:
        return len(self.records)
