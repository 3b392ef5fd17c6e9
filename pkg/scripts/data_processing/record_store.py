"""Record store: raw grid/mask files, the dataset manifest and window reads.

A dataset directory holds record pairs ``<id>.grid.f32`` (little-endian
float32, frames × channels × H × W) and ``<id>.mask.u8`` (uint8 in {0, 1},
frames × classes × H × W), plus ``manifest.json``. Producers write a draft
manifest with the shapes and class names; :func:`build_manifest` completes it
with per-file frame counts, window counts, checksums and channel statistics.
"""

import bisect
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.common.exceptions import (
    DataFormatError,
    DegenerateDataError,
    IntegrityError,
    WindowRangeError,
)
from src.utils.common.logging import StructuredLogger, get_logger, log_performance
from src.utils.common.validation import SchemaValidator

FORMAT_VERSION = "1.0"
MANIFEST_NAME = "manifest.json"
GRID_SUFFIX = ".grid.f32"
MASK_SUFFIX = ".mask.u8"
GRID_DTYPE = np.dtype("<f4")
MASK_DTYPE = np.dtype("u1")

logger = get_logger(__name__)
events = StructuredLogger(__name__)

MANIFEST_SCHEMA: Dict[str, Any] = {
    "required": ["format_version", "shapes", "class_names"],
    "properties": {
        "format_version": {"type": "string"},
        "shapes": {
            "type": "object",
            "required": ["C", "K", "H", "W"],
            "properties": {
                "C": {"type": "integer", "minimum": 1},
                "K": {"type": "integer", "minimum": 1},
                "H": {"type": "integer", "minimum": 1},
                "W": {"type": "integer", "minimum": 1},
                "T": {"type": "integer", "minimum": 1},
            },
        },
        "class_names": {"type": "array", "items": {"type": "string"}},
        "channel_names": {"type": "array", "items": {"type": "string"}},
        "time_step_hours": {"type": "number", "minimum": 0},
        "stride": {"type": "integer", "minimum": 1},
        "record_count": {"type": "integer", "minimum": 0},
        "records": {
            "type": "array",
            "items": {"type": "object", "required": ["id"]},
        },
        "statistics": {
            "type": "object",
            "required": ["mean", "std"],
            "properties": {
                "mean": {"type": "array", "items": {"type": "number"}},
                "std": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
    },
}

_schema_validator = SchemaValidator()
_schema_validator.add_schema("manifest", MANIFEST_SCHEMA)


@dataclass
class GridSequence:
    """T×C×H×W weather tensor."""

    values: np.ndarray
    time_step_hours: float = 6.0


@dataclass
class EventMaskSequence:
    """T×K×H×W binary event mask."""

    values: np.ndarray
    class_names: List[str] = field(default_factory=list)


@dataclass
class RecordEntry:
    record_id: str
    frames: int
    windows: int = 0
    grid_sha256: Optional[str] = None
    mask_sha256: Optional[str] = None

    @property
    def grid_file(self) -> str:
        return f"{self.record_id}{GRID_SUFFIX}"

    @property
    def mask_file(self) -> str:
        return f"{self.record_id}{MASK_SUFFIX}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.record_id,
            "frames": self.frames,
            "windows": self.windows,
            "grid": self.grid_file,
            "mask": self.mask_file,
            "grid_sha256": self.grid_sha256,
            "mask_sha256": self.mask_sha256,
        }


@dataclass
class DatasetManifest:
    """Shapes, statistics and window index of a dataset directory."""

    root: Path
    channels: int
    mask_channels: int
    height: int
    width: int
    window_T: int
    stride: int
    class_names: List[str]
    mean: List[float]
    std: List[float]
    records: List[RecordEntry]
    channel_names: List[str] = field(default_factory=list)
    time_step_hours: float = 6.0
    format_version: str = FORMAT_VERSION

    def __post_init__(self) -> None:
        self._window_offsets = np.cumsum([0] + [r.windows for r in self.records]).tolist()

    @property
    def record_count(self) -> int:
        return int(self._window_offsets[-1])

    @property
    def frame_count(self) -> int:
        return int(sum(r.frames for r in self.records))

    @property
    def frame_shape(self) -> Tuple[int, int, int]:
        return self.channels, self.height, self.width

    def locate(self, index: int) -> Tuple[RecordEntry, int]:
        """Record and first frame of window ``index``."""
        if not 0 <= index < self.record_count:
            raise WindowRangeError(index, self.record_count)
        pos = bisect.bisect_right(self._window_offsets, index) - 1
        return self.records[pos], (index - self._window_offsets[pos]) * self.stride

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": self.format_version,
            "shapes": {
                "T": self.window_T,
                "C": self.channels,
                "K": self.mask_channels,
                "H": self.height,
                "W": self.width,
            },
            "stride": self.stride,
            "class_names": list(self.class_names),
            "channel_names": list(self.channel_names),
            "time_step_hours": self.time_step_hours,
            "record_count": self.record_count,
            "frame_count": self.frame_count,
            "statistics": {"mean": list(self.mean), "std": list(self.std)},
            "records": [r.to_dict() for r in self.records],
        }

    def save(self) -> Path:
        path = self.root / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
        return path

    @classmethod
    def from_dict(cls, data: Dict[str, Any], root: Union[str, Path]) -> "DatasetManifest":
        _validate_manifest_document(data, Path(root) / MANIFEST_NAME)
        if "statistics" not in data or "T" not in data["shapes"]:
            raise DataFormatError(
                "Manifest is a draft; run build_manifest first",
                stage="load_manifest",
                data_source=str(root),
            )
        shapes = data["shapes"]
        return cls(
            root=Path(root),
            channels=shapes["C"],
            mask_channels=shapes["K"],
            height=shapes["H"],
            width=shapes["W"],
            window_T=shapes["T"],
            stride=data.get("stride", shapes["T"]),
            class_names=list(data["class_names"]),
            channel_names=list(data.get("channel_names", [])),
            time_step_hours=float(data.get("time_step_hours", 6.0)),
            mean=[float(v) for v in data["statistics"]["mean"]],
            std=[float(v) for v in data["statistics"]["std"]],
            records=[
                RecordEntry(
                    record_id=r["id"],
                    frames=int(r["frames"]),
                    windows=int(r.get("windows", 0)),
                    grid_sha256=r.get("grid_sha256"),
                    mask_sha256=r.get("mask_sha256"),
                )
                for r in data.get("records", [])
            ],
            format_version=data["format_version"],
        )


def _validate_manifest_document(data: Any, path: Path) -> None:
    if not isinstance(data, dict):
        raise DataFormatError(
            "Manifest must be a JSON object", stage="manifest", data_source=str(path)
        )
    result = _schema_validator.validate_data(data, "manifest")
    if not result["valid"]:
        raise DataFormatError(
            f"Invalid manifest {path}: {result['errors'][0]}",
            stage="manifest",
            data_source=str(path),
        )
    shapes = data["shapes"]
    if len(data["class_names"]) != shapes["K"]:
        raise DataFormatError(
            f"Manifest {path} lists {len(data['class_names'])} class names for K={shapes['K']}",
            stage="manifest",
            data_source=str(path),
        )


def _read_json(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise DataFormatError(
            f"No manifest found at {path}", stage="manifest", data_source=str(path)
        ) from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(
            f"Manifest {path} is not valid JSON: {exc}", stage="manifest", data_source=str(path)
        ) from exc


def sha256_file(path: Union[str, Path], chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def window_count(frames: int, window_T: int, stride: int) -> int:
    """Number of windows ⌊(frames − window_T)/stride⌋ + 1, or 0 if too short."""
    if frames < window_T:
        return 0
    return (frames - window_T) // stride + 1


class RecordStore:
    """Writer and reader for a dataset directory."""

    def __init__(self, root: Union[str, Path], config: Optional[Dict[str, Any]] = None):
        """Initialize record store.

        Args:
            root: Dataset directory
            config: Optional settings (``verify_checksums``)
        """
        self.root = Path(root)
        self.config = config or {}
        self.logger = get_logger(__name__)

    def write_record(self, record_id: str, grid: np.ndarray, mask: np.ndarray) -> RecordEntry:
        """Write one grid/mask pair in the raw little-endian layout."""
        if grid.ndim != 4 or mask.ndim != 4:
            raise DataFormatError(
                "Records must be frames × channels × H × W",
                stage="write_record",
                data_source=record_id,
            )
        if grid.shape[0] != mask.shape[0] or grid.shape[2:] != mask.shape[2:]:
            raise DataFormatError(
                f"Grid {grid.shape} and mask {mask.shape} disagree on frames or size",
                stage="write_record",
                data_source=record_id,
            )
        self.root.mkdir(parents=True, exist_ok=True)
        entry = RecordEntry(record_id=record_id, frames=int(grid.shape[0]))
        np.ascontiguousarray(grid, dtype=GRID_DTYPE).tofile(self.root / entry.grid_file)
        np.ascontiguousarray(mask, dtype=MASK_DTYPE).tofile(self.root / entry.mask_file)
        return entry

    def write_draft_manifest(
        self,
        channels: int,
        mask_channels: int,
        height: int,
        width: int,
        class_names: Sequence[str],
        records: Optional[Sequence[RecordEntry]] = None,
        channel_names: Optional[Sequence[str]] = None,
        time_step_hours: float = 6.0,
    ) -> Path:
        """Write the shapes-only manifest that :func:`build_manifest` completes."""
        self.root.mkdir(parents=True, exist_ok=True)
        draft = {
            "format_version": FORMAT_VERSION,
            "shapes": {"C": channels, "K": mask_channels, "H": height, "W": width},
            "class_names": list(class_names),
            "channel_names": list(channel_names or []),
            "time_step_hours": float(time_step_hours),
        }
        if records is not None:
            draft["records"] = [{"id": r.record_id, "frames": r.frames} for r in records]
        path = self.root / MANIFEST_NAME
        with open(path, "w", encoding="utf-8") as f:
            json.dump(draft, f, indent=2)
            f.write("\n")
        return path

    def load_manifest(self) -> DatasetManifest:
        manifest = DatasetManifest.from_dict(_read_json(self.root / MANIFEST_NAME), self.root)
        if self.config.get("verify_checksums", False):
            verify_checksums(manifest)
        return manifest

    def _discover_records(self, draft: Dict[str, Any], frame_bytes: int) -> List[RecordEntry]:
        if draft.get("records"):
            return [RecordEntry(r["id"], int(r.get("frames", 0))) for r in draft["records"]]
        entries = []
        for grid_path in sorted(self.root.glob(f"*{GRID_SUFFIX}")):
            record_id = grid_path.name[: -len(GRID_SUFFIX)]
            size = grid_path.stat().st_size
            if size % frame_bytes:
                raise DataFormatError(
                    f"{grid_path} holds {size} bytes, not a whole number of frames",
                    stage="build_manifest",
                    data_source=str(grid_path),
                )
            entries.append(RecordEntry(record_id, size // frame_bytes))
        return entries

    @log_performance(logger)
    def build_manifest(
        self,
        window_T: int,
        stride: int,
        statistics: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
    ) -> DatasetManifest:
        """Validate every record, compute statistics and index the windows.

        Args:
            window_T: Frames per training window
            stride: Frames between consecutive window starts
            statistics: Per-channel (mean, std) to store instead of the
                computed moments; skips the zero-variance check

        Returns:
            Completed manifest, also written to ``manifest.json``
        """
        if window_T < 1 or stride < 1:
            raise DataFormatError(
                "window_T and stride must be positive",
                stage="build_manifest",
                data_source=str(self.root),
            )
        draft = _read_json(self.root / MANIFEST_NAME)
        _validate_manifest_document(draft, self.root / MANIFEST_NAME)
        shapes = draft["shapes"]
        c, k, h, w = shapes["C"], shapes["K"], shapes["H"], shapes["W"]
        grid_frame_bytes = c * h * w * GRID_DTYPE.itemsize
        mask_frame_bytes = k * h * w * MASK_DTYPE.itemsize

        entries = self._discover_records(draft, grid_frame_bytes)
        if not entries:
            raise DataFormatError(
                f"No records found in {self.root}",
                stage="build_manifest",
                data_source=str(self.root),
            )

        count = np.zeros(c, dtype=np.float64)
        mean = np.zeros(c, dtype=np.float64)
        m2 = np.zeros(c, dtype=np.float64)
        for entry in entries:
            grid_path, mask_path = self.root / entry.grid_file, self.root / entry.mask_file
            for path in (grid_path, mask_path):
                if not path.exists():
                    raise DataFormatError(
                        f"Missing record file {path}", stage="build_manifest", data_source=str(path)
                    )
            grid_frames, rem_g = divmod(grid_path.stat().st_size, grid_frame_bytes)
            mask_frames, rem_m = divmod(mask_path.stat().st_size, mask_frame_bytes)
            if rem_g or rem_m or grid_frames != mask_frames:
                raise DataFormatError(
                    f"Record '{entry.record_id}': grid holds {grid_frames} frames "
                    f"of {c}×{h}×{w}, "
                    f"mask holds {mask_frames} frames of {k}×{h}×{w}",
                    stage="build_manifest",
                    data_source=str(grid_path),
                )
            if entry.frames and entry.frames != grid_frames:
                raise DataFormatError(
                    f"Record '{entry.record_id}' declares {entry.frames} frames, "
                    f"files hold {grid_frames}",
                    stage="build_manifest",
                    data_source=str(grid_path),
                )
            entry.frames = int(grid_frames)
            entry.windows = window_count(entry.frames, window_T, stride)

            grid = np.fromfile(grid_path, dtype=GRID_DTYPE).reshape(entry.frames, c, h, w)
            mask = np.fromfile(mask_path, dtype=MASK_DTYPE)
            if not np.all(np.isfinite(grid)):
                raise DataFormatError(
                    f"Record '{entry.record_id}' contains non-finite grid values",
                    stage="build_manifest",
                    data_source=str(grid_path),
                )
            if mask.size and mask.max() > 1:
                raise DataFormatError(
                    f"Record '{entry.record_id}' mask has values outside {{0, 1}}",
                    stage="build_manifest",
                    data_source=str(mask_path),
                )

            # Pairwise combination of per-file moments.
            n_b = float(entry.frames * h * w)
            if n_b:
                values = grid.astype(np.float64)
                mean_b = values.mean(axis=(0, 2, 3))
                m2_b = ((values - mean_b[None, :, None, None]) ** 2).sum(axis=(0, 2, 3))
                delta = mean_b - mean
                total = count + n_b
                mean = mean + delta * n_b / total
                m2 = m2 + m2_b + delta**2 * count * n_b / total
                count = total

            entry.grid_sha256 = sha256_file(grid_path)
            entry.mask_sha256 = sha256_file(mask_path)

        std = np.sqrt(m2 / np.maximum(count, 1.0))
        if statistics is not None:
            mean, std = (np.asarray(v, dtype=np.float64) for v in statistics)
            if mean.shape != (c,) or std.shape != (c,) or not np.all(std > 0):
                raise DataFormatError(
                    f"Statistics must hold {c} means and {c} positive deviations",
                    stage="build_manifest",
                    data_source=str(self.root),
                )
        for ch in range(c):
            if not std[ch] > 0:
                raise DegenerateDataError(
                    f"Channel {ch} has zero variance over the dataset",
                    stage="build_manifest",
                    data_source=str(self.root),
                )

        manifest = DatasetManifest(
            root=self.root,
            channels=c,
            mask_channels=k,
            height=h,
            width=w,
            window_T=window_T,
            stride=stride,
            class_names=list(draft["class_names"]),
            channel_names=list(draft.get("channel_names", [])),
            time_step_hours=float(draft.get("time_step_hours", 6.0)),
            mean=[float(v) for v in mean],
            std=[float(v) for v in std],
            records=entries,
        )
        if manifest.record_count == 0:
            longest = max((entry.frames for entry in entries), default=0)
            raise DataFormatError(
                f"Dataset holds {longest} frames per file at most, fewer than "
                f"window_T={window_T}",
                stage="build_manifest",
                data_source=str(self.root),
            )
        manifest.save()
        events.info(
            "manifest_built",
            root=str(self.root),
            records=len(entries),
            windows=manifest.record_count,
            frames=manifest.frame_count,
            shapes={"T": window_T, "C": c, "K": k, "H": h, "W": w},
        )
        return manifest


def build_manifest(raw_dir: Union[str, Path], window_T: int, stride: int) -> DatasetManifest:
    """Complete the manifest of ``raw_dir`` for the given window length and stride."""
    return RecordStore(raw_dir).build_manifest(window_T, stride)


def load_manifest(root: Union[str, Path], verify: bool = False) -> DatasetManifest:
    return RecordStore(root, {"verify_checksums": verify}).load_manifest()


def verify_checksums(manifest: DatasetManifest) -> None:
    """Recompute SHA-256 of every file; raise IntegrityError on the first mismatch."""
    for entry in manifest.records:
        files = ((entry.grid_file, entry.grid_sha256), (entry.mask_file, entry.mask_sha256))
        for name, expected in files:
            path = manifest.root / name
            if not path.exists():
                raise IntegrityError(f"Record file is missing: {path}", path=str(path))
            if expected is not None and sha256_file(path) != expected:
                raise IntegrityError(f"Checksum mismatch for {path}", path=str(path))


def normalize(grid: np.ndarray, manifest: DatasetManifest) -> np.ndarray:
    """Per-channel z-score of a (..., C, H, W) array with manifest statistics."""
    mean = np.asarray(manifest.mean, dtype=np.float64)[:, None, None]
    std = np.asarray(manifest.std, dtype=np.float64)[:, None, None]
    return ((grid.astype(np.float64) - mean) / std).astype(np.float32)


def denormalize(grid: np.ndarray, manifest: DatasetManifest) -> np.ndarray:
    """Inverse of :func:`normalize`."""
    mean = np.asarray(manifest.mean, dtype=np.float64)[:, None, None]
    std = np.asarray(manifest.std, dtype=np.float64)[:, None, None]
    return (grid.astype(np.float64) * std + mean).astype(np.float32)


def _read_block(
    path: Path, dtype: np.dtype, frame_items: int, frames: int, start: int, count: int
) -> np.ndarray:
    expected = frames * frame_items * dtype.itemsize
    try:
        actual = os.path.getsize(path)
    except OSError as exc:
        raise IntegrityError(f"Cannot read record file {path}: {exc}", path=str(path)) from exc
    if actual != expected:
        raise IntegrityError(
            f"Record file {path} holds {actual} bytes, expected {expected}", path=str(path)
        )
    return np.fromfile(
        path, dtype=dtype, count=count * frame_items, offset=start * frame_items * dtype.itemsize
    )


def read_window(manifest: DatasetManifest, index: int) -> Tuple[GridSequence, EventMaskSequence]:
    """Window ``index``: normalised T×C×H×W grid and the raw T×K×H×W mask."""
    entry, start = manifest.locate(index)
    t, c, k = manifest.window_T, manifest.channels, manifest.mask_channels
    h, w = manifest.height, manifest.width
    root, frames = manifest.root, entry.frames
    grid = _read_block(root / entry.grid_file, GRID_DTYPE, c * h * w, frames, start, t)
    mask = _read_block(root / entry.mask_file, MASK_DTYPE, k * h * w, frames, start, t)
    return (
        GridSequence(normalize(grid.reshape(t, c, h, w), manifest), manifest.time_step_hours),
        EventMaskSequence(mask.reshape(t, k, h, w).copy(), list(manifest.class_names)),
    )
