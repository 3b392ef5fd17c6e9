"""Single-file checkpoint container.

Layout::

    b"EEGCKPT1" | uint64 LE header length | UTF-8 JSON header | raw "<f4" blocks

The header names every block with its shape and byte offset (relative to the
end of the header) and carries everything else needed to resume: epoch, step,
config and its hash, optimizer step counters, the noise generator state and
the training dataset's statistics.
"""

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from src.utils.common.exceptions import IntegrityError
from src.utils.common.logging import StructuredLogger, get_logger
from src.utils.common.validation import SchemaValidator

MAGIC = b"EEGCKPT1"
BLOCK_DTYPE = np.dtype("<f4")
_LENGTH = struct.Struct("<Q")

logger = get_logger(__name__)
events = StructuredLogger(__name__)

HEADER_SCHEMA: Dict[str, Any] = {
    "required": ["epoch", "step", "config_hash", "config", "blocks", "dataset"],
    "properties": {
        "epoch": {"type": "integer", "minimum": 0},
        "step": {"type": "integer", "minimum": 0},
        "config_hash": {"type": "string"},
        "config": {"type": "object"},
        "optimizer_steps": {"type": "object"},
        "rng_state": {"type": "object"},
        "dataset": {
            "type": "object",
            "required": ["mean", "std", "frame", "mask_channels"],
            "properties": {
                "mean": {"type": "array", "items": {"type": "number"}},
                "std": {"type": "array", "items": {"type": "number"}},
                "frame": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "mask_channels": {"type": "integer", "minimum": 1},
            },
        },
        "blocks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "shape", "offset"],
                "properties": {
                    "name": {"type": "string"},
                    "shape": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "offset": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}

_schema_validator = SchemaValidator()
_schema_validator.add_schema("checkpoint_header", HEADER_SCHEMA)

Arrays = Dict[str, np.ndarray]


@dataclass
class CheckpointRecord:
    """Complete training state at an epoch boundary.

    ``model`` holds parameters and buffers of all networks; ``optimizers``
    maps ``"generator"``/``"discriminator"`` to their moment estimates.
    """

    epoch: int
    step: int
    config: Dict[str, Any]
    config_hash: str
    model: Arrays
    optimizers: Dict[str, Arrays] = field(default_factory=dict)
    optimizer_steps: Dict[str, int] = field(default_factory=dict)
    rng_state: Dict[str, Any] = field(default_factory=dict)
    dataset: Dict[str, Any] = field(default_factory=dict)

    @property
    def frame(self) -> Tuple[int, int, int]:
        c, h, w = self.dataset["frame"]
        return int(c), int(h), int(w)

    @property
    def mask_channels(self) -> int:
        return int(self.dataset["mask_channels"])

    def _named_blocks(self) -> List[Tuple[str, np.ndarray]]:
        blocks = [(f"model/{k}", v) for k, v in self.model.items()]
        for group, state in self.optimizers.items():
            blocks.extend((f"optim/{group}/{k}", v) for k, v in state.items())
        return blocks


def save_checkpoint(path: Union[str, Path], record: CheckpointRecord) -> Path:
    """Write ``record`` atomically (temporary file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    blocks, descriptors, offset = [], [], 0
    for name, value in record._named_blocks():
        data = np.ascontiguousarray(value, dtype=BLOCK_DTYPE)
        descriptors.append({"name": name, "shape": list(data.shape), "offset": offset})
        blocks.append(data)
        offset += data.nbytes

    header = {
        "format": MAGIC.decode("ascii"),
        "epoch": int(record.epoch),
        "step": int(record.step),
        "config_hash": record.config_hash,
        "config": record.config,
        "optimizer_steps": {k: int(v) for k, v in record.optimizer_steps.items()},
        "rng_state": record.rng_state,
        "dataset": record.dataset,
        "blocks": descriptors,
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(_LENGTH.pack(len(encoded)))
        f.write(encoded)
        for data in blocks:
            f.write(data.tobytes())
    os.replace(tmp, path)

    events.info(
        "checkpoint_written",
        path=str(path),
        epoch=record.epoch,
        step=record.step,
        blocks=len(descriptors),
        bytes=offset,
    )
    return path


def _read_header(f: Any, path: Path) -> Tuple[Dict[str, Any], int]:
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise IntegrityError(f"{path} is not a checkpoint (bad magic)", path=str(path))
    raw_len = f.read(_LENGTH.size)
    if len(raw_len) != _LENGTH.size:
        raise IntegrityError(f"Checkpoint {path} is truncated in its header", path=str(path))
    (length,) = _LENGTH.unpack(raw_len)
    raw = f.read(length)
    if len(raw) != length:
        raise IntegrityError(f"Checkpoint {path} is truncated in its header", path=str(path))
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"Checkpoint {path} has a corrupted header", path=str(path)) from exc

    result = _schema_validator.validate_data(header, "checkpoint_header")
    if not result["valid"]:
        raise IntegrityError(
            f"Checkpoint {path} header is invalid: {result['errors'][0]}", path=str(path)
        )
    return header, len(MAGIC) + _LENGTH.size + length


def load_checkpoint(path: Union[str, Path]) -> CheckpointRecord:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        IntegrityError: On a foreign file, a corrupted header or missing data
    """
    path = Path(path)
    if not path.is_file():
        raise IntegrityError(f"Checkpoint not found: {path}", path=str(path))

    with open(path, "rb") as f:
        header, data_start = _read_header(f, path)

    available = path.stat().st_size - data_start
    model: Arrays = OrderedDict()
    optimizers: Dict[str, Arrays] = {}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = block["offset"] + count * BLOCK_DTYPE.itemsize
        if end > available:
            raise IntegrityError(
                f"Checkpoint {path} is truncated at block '{block['name']}'", path=str(path)
            )
        values = np.fromfile(
            path, dtype=BLOCK_DTYPE, count=count, offset=data_start + block["offset"]
        ).reshape(shape)
        values = values.astype(np.float32)

        kind, _, rest = block["name"].partition("/")
        if kind == "model":
            model[rest] = values
        elif kind == "optim":
            group, _, key = rest.partition("/")
            optimizers.setdefault(group, OrderedDict())[key] = values
        else:
            raise IntegrityError(
                f"Checkpoint {path} has an unknown block '{block['name']}'", path=str(path)
            )

    logger.debug("Loaded checkpoint %s (epoch %d, step %d)", path, header["epoch"], header["step"])
    return CheckpointRecord(
        epoch=header["epoch"],
        step=header["step"],
        config=header["config"],
        config_hash=header["config_hash"],
        model=model,
        optimizers=optimizers,
        optimizer_steps={k: int(v) for k, v in header.get("optimizer_steps", {}).items()},
        rng_state=header.get("rng_state", {}),
        dataset=header["dataset"],
    )
