"""Synthetic moving-blob dataset with exact event masks."""

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.utils.common.config import build_dataclass, enforce_rules
from src.utils.common.exceptions import ConfigurationError
from src.utils.common.logging import get_logger, log_performance
from src.utils.common.validation import (
    validate_int_at_least,
    validate_non_negative_number,
    validate_not_empty,
    validate_positive_int,
    validate_positive_number,
)

from .record_store import DatasetManifest, RecordStore

logger = get_logger(__name__)

HALF_PEAK = 0.5
CHANNEL_OFFSET = 0.25


@dataclass
class ToyGenConfig:
    """Synthetic dataset description.

    ``blob_radius`` is the half-peak radius: a blob's mask is the disc of that
    radius around its centre.
    """

    height: int = 16
    width: int = 16
    frames: int = 8
    mask_channels: int = 1
    channels: int = 1
    sequences: int = 512
    blob_radius: float = 3.0
    blob_speed: float = 1.0
    noise_level: float = 0.05
    seed: int = 0
    output_dir: str = "data/toy"
    window_T: Optional[int] = None
    stride: Optional[int] = None
    time_step_hours: float = 6.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        enforce_rules(
            "toy",
            asdict(self),
            {
                "height": [validate_int_at_least(4)],
                "width": [validate_int_at_least(4)],
                "frames": [validate_int_at_least(4)],
                "mask_channels": [validate_positive_int],
                "channels": [validate_positive_int],
                "sequences": [validate_positive_int],
                "blob_radius": [validate_positive_number],
                "blob_speed": [validate_non_negative_number],
                "noise_level": [validate_non_negative_number],
                "output_dir": [validate_not_empty],
                "window_T": [validate_positive_int],
                "stride": [validate_positive_int],
                "time_step_hours": [validate_positive_number],
            },
        )
        if not self.blob_radius < min(self.height, self.width) / 2:
            raise ConfigurationError(
                f"toy.blob_radius must be below min(H, W)/2 = {min(self.height, self.width) / 2}",
                config_key="toy.blob_radius",
            )
        if self.window_T is not None and self.window_T > self.frames:
            raise ConfigurationError(
                "toy.window_T cannot exceed toy.frames", config_key="toy.window_T"
            )

    @property
    def effective_window(self) -> int:
        return self.window_T or self.frames

    @property
    def effective_stride(self) -> int:
        return self.stride or self.effective_window


def reflect(position: np.ndarray, low: float, high: float) -> np.ndarray:
    """Fold positions into [low, high] as a ball bouncing off both walls."""
    span = high - low
    if span <= 0:
        return np.full_like(position, low)
    u = np.mod(position - low, 2.0 * span)
    return low + np.where(u > span, 2.0 * span - u, u)


def gaussian_blob(
    height: int, width: int, center: Tuple[float, float], radius: float
) -> np.ndarray:
    """Unit-peak Gaussian whose half-peak contour is the circle of ``radius``."""
    sigma = radius / np.sqrt(2.0 * np.log(2.0))
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    d2 = (rows - center[0]) ** 2 + (cols - center[1]) ** 2
    return np.exp(-d2 / (2.0 * sigma**2))


class ToyDatasetGenerator:
    """Generate blob sequences and write them as a dataset directory."""

    def __init__(self, config: ToyGenConfig):
        """Initialize toy dataset generator.

        Args:
            config: Validated toy dataset configuration
        """
        self.config = config
        self.logger = get_logger(__name__)
        self.rng = np.random.default_rng(config.seed)

    def _trajectory(self) -> np.ndarray:
        cfg = self.config
        bounds = []
        for size in (cfg.height, cfg.width):
            low = min(cfg.blob_radius, (size - 1) / 2.0)
            bounds.append((low, max(size - 1 - cfg.blob_radius, low)))
        start = np.array([self.rng.uniform(lo, hi) for lo, hi in bounds])
        angle = self.rng.uniform(0.0, 2.0 * np.pi)
        velocity = cfg.blob_speed * np.array([np.sin(angle), np.cos(angle)])
        steps = np.arange(cfg.frames, dtype=np.float64)[:, None]
        raw = start[None, :] + steps * velocity[None, :]
        return np.stack(
            [reflect(raw[:, axis], *bounds[axis]) for axis in range(2)], axis=1
        )

    def generate_sequence(self) -> Tuple[np.ndarray, np.ndarray]:
        """One sequence: grid frames×C×H×W (float32) and mask frames×K×H×W (uint8)."""
        cfg = self.config
        blobs = np.zeros((cfg.frames, cfg.mask_channels, cfg.height, cfg.width), dtype=np.float64)
        for k in range(cfg.mask_channels):
            path = self._trajectory()
            for t in range(cfg.frames):
                blobs[t, k] = gaussian_blob(cfg.height, cfg.width, tuple(path[t]), cfg.blob_radius)
        noise = np.zeros((cfg.channels, cfg.height, cfg.width))
        if cfg.noise_level > 0:
            noise = self.rng.uniform(0.0, cfg.noise_level, size=noise.shape)

        # unit gain and non-negative offsets keep every channel >= HALF_PEAK inside the mask
        intensity = blobs.sum(axis=1)
        offsets = CHANNEL_OFFSET * np.arange(cfg.channels, dtype=np.float64)
        grid = intensity[:, None, :, :] + offsets[None, :, None, None] + noise[None, :, :, :]
        mask = (blobs > HALF_PEAK).astype(np.uint8)
        return grid.astype(np.float32), mask

    @log_performance(logger)
    def write(self) -> DatasetManifest:
        cfg = self.config
        store = RecordStore(Path(cfg.output_dir))
        entries = []
        for i in range(cfg.sequences):
            grid, mask = self.generate_sequence()
            entries.append(store.write_record(f"seq_{i:05d}", grid, mask))
        store.write_draft_manifest(
            channels=cfg.channels,
            mask_channels=cfg.mask_channels,
            height=cfg.height,
            width=cfg.width,
            class_names=self.class_names(),
            records=entries,
            channel_names=[f"intensity_{c}" for c in range(cfg.channels)],
            time_step_hours=cfg.time_step_hours,
        )
        self.logger.info("Wrote %d toy sequences to %s", cfg.sequences, cfg.output_dir)
        return store.build_manifest(cfg.effective_window, cfg.effective_stride)

    def class_names(self) -> List[str]:
        return [f"blob_{k}" for k in range(self.config.mask_channels)]


def make_toy_dataset(config: ToyGenConfig) -> DatasetManifest:
    """Generate, store and index a toy dataset; deterministic given ``config.seed``."""
    return ToyDatasetGenerator(config).write()


def toy_config_from_dict(data: Dict[str, Any]) -> ToyGenConfig:
    """Build a ToyGenConfig from a mapping, optionally nested under ``toy``."""
    section = data.get("toy", data)
    return build_dataclass(ToyGenConfig, section, prefix="toy.")
