"""Side-by-side montages of masks, real and generated sequences.

A montage has one row per :class:`RenderRow` and one column per time step;
tiles are separated by 1-pixel white lines, so ``rows`` rows of ``steps``
tiles of H×W pixels give an image of ``rows·H + rows − 1`` by
``steps·W + steps − 1`` pixels. Grey levels map linearly from the row's
display range onto 0..255.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from scripts.data_processing.record_store import (
    DatasetManifest,
    denormalize,
    load_manifest,
    read_window,
)
from src.utils.common.config import (
    ConfigManager,
    build_dataclass,
    enforce_rules,
)
from src.utils.common.exceptions import ConfigurationError, DataProcessingError, ShapeError
from src.utils.common.logging import get_logger
from src.utils.common.validation import (
    validate_int_at_least,
    validate_not_empty,
    validate_positive_int,
)

logger = get_logger(__name__)

SEPARATOR = 1
SEPARATOR_LEVEL = 255
DEFAULT_STEPS = 10


class RowSource(str, Enum):
    MASK = "mask"
    REAL = "real"
    GENERATED = "generated"


@dataclass
class RenderRow:
    """``index`` is the event class for mask rows, the channel otherwise."""

    label: str
    source: RowSource
    index: int = 0
    display_range: Optional[Tuple[float, float]] = None

    def __post_init__(self) -> None:
        try:
            self.source = RowSource(self.source)
        except ValueError as exc:
            raise ConfigurationError(
                f"Row '{self.label}' has unknown source '{self.source}'",
                config_key="render.rows.source",
            ) from exc
        enforce_rules("render.rows", {"index": self.index}, {"index": [validate_int_at_least(0)]})
        if self.display_range is not None and not self.display_range[0] < self.display_range[1]:
            raise ConfigurationError(
                f"Display range of row '{self.label}' needs min < max",
                config_key="render.rows.display_range",
            )


@dataclass
class RenderSpec:
    """What to draw and where.

    ``rows`` empty selects the default layout: the event mask, then a real
    and a generated row for every channel. ``steps`` empty shows up to ten
    consecutive steps from ``start``.
    """

    real_dataset: str
    output: str
    generated_dataset: Optional[str] = None
    window: int = 0
    generated_window: Optional[int] = None
    start: int = 0
    steps: Optional[int] = None
    rows: List[RenderRow] = field(default_factory=list)
    png: bool = False

    def __post_init__(self) -> None:
        enforce_rules(
            "render",
            asdict(self),
            {
                "real_dataset": [validate_not_empty],
                "output": [validate_not_empty],
                "window": [validate_int_at_least(0)],
                "generated_window": [validate_int_at_least(0)],
                "start": [validate_int_at_least(0)],
                "steps": [validate_positive_int],
            },
        )


def render_spec_from_dict(data: Dict[str, Any]) -> RenderSpec:
    """Build a RenderSpec from a mapping, optionally nested under ``render``."""
    return build_dataclass(RenderSpec, data.get("render", data), prefix="render.")


def load_render_spec(path: str) -> RenderSpec:
    return ConfigManager(path).load(render_spec_from_dict)


def montage_size(rows: int, steps: int, height: int, width: int) -> Tuple[int, int]:
    """Pixel height and width of a montage."""
    return rows * height + (rows - 1) * SEPARATOR, steps * width + (steps - 1) * SEPARATOR


def to_grey(values: np.ndarray, low: float, high: float) -> np.ndarray:
    """Map ``[low, high]`` linearly onto 0..255, clipping outside values."""
    if not low < high:
        raise ConfigurationError("Display range needs min < max", config_key="render.display_range")
    scaled = (values.astype(np.float64) - low) / (high - low)
    return np.rint(np.clip(scaled, 0.0, 1.0) * 255.0).astype(np.uint8)


def compose_montage(tiles: List[np.ndarray]) -> np.ndarray:
    """Arrange rows of grey tiles (each steps×H×W, uint8) into one image."""
    if not tiles:
        raise ShapeError("A montage needs at least one row", ">= 1", 0)
    steps, height, width = tiles[0].shape
    for row in tiles:
        if row.shape != (steps, height, width):
            raise ShapeError(
                "All montage rows must share steps and tile size", tiles[0].shape, row.shape
            )
    image = np.full(montage_size(len(tiles), steps, height, width), SEPARATOR_LEVEL, dtype=np.uint8)
    for r, row in enumerate(tiles):
        top = r * (height + SEPARATOR)
        for t in range(steps):
            left = t * (width + SEPARATOR)
            image[top : top + height, left : left + width] = row[t]
    return image


def write_pgm(path: Union[str, Path], image: np.ndarray) -> Path:
    """Binary greyscale PGM (P5, maxval 255)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())
    return path


def write_png(path: Union[str, Path], image: np.ndarray) -> Path:
    try:
        from PIL import Image
    except ImportError as exc:
        raise ConfigurationError(
            "PNG output needs Pillow; install the 'render' extra", config_key="render.png"
        ) from exc
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image, mode="L").save(path)
    return path


def default_rows(channels: int, generated: bool) -> List[RenderRow]:
    rows = [RenderRow("mask", RowSource.MASK, 0, (0.0, 1.0))]
    for c in range(channels):
        rows.append(RenderRow(f"real_{c}", RowSource.REAL, c))
        if generated:
            rows.append(RenderRow(f"generated_{c}", RowSource.GENERATED, c))
    return rows


class MontageRenderer:
    """Read the referenced windows and draw a :class:`RenderSpec`."""

    def __init__(self, spec: RenderSpec):
        self.spec = spec
        self.logger = get_logger(__name__)
        self.real = self._load(spec.real_dataset, spec.window)
        self.generated: Optional[Tuple[np.ndarray, np.ndarray]] = None
        if spec.generated_dataset:
            gen_window = spec.window if spec.generated_window is None else spec.generated_window
            self.generated = self._load(spec.generated_dataset, gen_window)

    def _load(self, path: str, window: int) -> Tuple[np.ndarray, np.ndarray]:
        """Physical-unit grid and mask of one window."""
        manifest: DatasetManifest = load_manifest(path)
        grid, mask = read_window(manifest, window)
        return denormalize(grid.values, manifest), mask.values

    def _source(self, row: RenderRow) -> np.ndarray:
        if row.source is RowSource.GENERATED:
            if self.generated is None:
                raise DataProcessingError(
                    f"Row '{row.label}' needs a generated dataset",
                    stage="render",
                    data_source="generated",
                )
            grid, _ = self.generated
            values, what = grid, "channel"
        elif row.source is RowSource.MASK:
            values, what = self.real[1], "event class"
        else:
            values, what = self.real[0], "channel"
        if row.index >= values.shape[1]:
            raise DataProcessingError(
                f"Row '{row.label}' asks for {what} {row.index}, the data has {values.shape[1]}",
                stage="render",
                data_source=row.source.value,
            )
        return values[:, row.index]

    def _steps(self, available: int) -> int:
        spec = self.spec
        steps = spec.steps if spec.steps is not None else min(DEFAULT_STEPS, available - spec.start)
        if steps < 1 or spec.start + steps > available:
            raise ConfigurationError(
                f"Steps {spec.start}..{spec.start + steps} exceed the window length {available}",
                config_key="render.steps",
            )
        return steps

    def render(self) -> np.ndarray:
        spec = self.spec
        rows = spec.rows or default_rows(self.real[0].shape[1], self.generated is not None)
        sources = [self._source(row) for row in rows]
        if len({s.shape for s in sources}) != 1:
            raise ShapeError(
                "Rows disagree on time steps or frame size",
                sources[0].shape,
                [s.shape for s in sources],
            )
        steps = self._steps(sources[0].shape[0])
        window = slice(spec.start, spec.start + steps)

        real_values = self.real[0][window]
        tiles = []
        for row, values in zip(rows, sources):
            shown = values[window]
            if row.display_range is not None:
                low, high = row.display_range
            elif row.source is RowSource.MASK:
                low, high = 0.0, 1.0
            else:
                # real and generated rows of a channel share the real data's range
                reference = real_values[:, min(row.index, real_values.shape[1] - 1)]
                low, high = float(reference.min()), float(reference.max())
                if not low < high:
                    high = low + 1.0
            tiles.append(to_grey(shown, low, high))
        return compose_montage(tiles)

    def write(self) -> List[Path]:
        image = self.render()
        out = Path(self.spec.output)
        written = [write_pgm(out.with_suffix(".pgm"), image)]
        if self.spec.png:
            written.append(write_png(out.with_suffix(".png"), image))
        self.logger.info("Wrote %s×%s montage to %s", image.shape[0], image.shape[1], written)
        return written


def render_montage(spec: RenderSpec) -> List[Path]:
    """Draw ``spec`` and write the PGM (and optionally PNG) files."""
    return MontageRenderer(spec).write()
