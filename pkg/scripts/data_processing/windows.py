"""Deterministic mini-batch iteration over manifest windows."""

from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Deque, Iterator, List, Sequence

import numpy as np

from src.utils.common.exceptions import ConfigurationError

from .record_store import DatasetManifest, read_window


@dataclass
class WindowBatch:
    """N windows stacked: grids N×T×C×H×W (normalised), masks N×T×K×H×W."""

    grids: np.ndarray
    masks: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return int(self.grids.shape[0])


def epoch_permutation(record_count: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    """Window order of one epoch, a pure function of (seed, epoch)."""
    return np.random.default_rng([shuffle_seed, epoch]).permutation(record_count)


def batches_per_epoch(manifest: DatasetManifest, batch_size: int) -> int:
    _check_batch_size(manifest, batch_size)
    return manifest.record_count // batch_size


def _check_batch_size(manifest: DatasetManifest, batch_size: int) -> None:
    if batch_size < 1:
        raise ConfigurationError("batch_size must be at least 1", config_key="data.batch_size")
    if batch_size > manifest.record_count:
        raise ConfigurationError(
            f"batch_size {batch_size} exceeds the {manifest.record_count} windows of "
            f"{manifest.root}",
            config_key="data.batch_size",
        )


def load_batch(manifest: DatasetManifest, indices: Sequence[int]) -> WindowBatch:
    grids, masks = [], []
    for index in indices:
        grid, mask = read_window(manifest, int(index))
        grids.append(grid.values)
        masks.append(mask.values)
    return WindowBatch(np.stack(grids), np.stack(masks), np.asarray(indices, dtype=np.int64))


def batch_iter(
    manifest: DatasetManifest,
    batch_size: int,
    shuffle_seed: int,
    epoch: int = 0,
    prefetch_workers: int = 0,
) -> Iterator[WindowBatch]:
    """Yield the full batches of one epoch in a seed-determined order.

    The final short batch is dropped. With ``prefetch_workers > 0`` batches
    are read ahead on a thread pool; results are still yielded in order.
    """
    _check_batch_size(manifest, batch_size)
    order = epoch_permutation(manifest.record_count, shuffle_seed, epoch)
    n_batches = manifest.record_count // batch_size
    chunks: List[np.ndarray] = [
        order[b * batch_size : (b + 1) * batch_size] for b in range(n_batches)
    ]

    if prefetch_workers <= 0:
        for chunk in chunks:
            yield load_batch(manifest, chunk)
        return

    depth = 2 * prefetch_workers
    with ThreadPoolExecutor(max_workers=prefetch_workers) as pool:
        pending: Deque[Future] = deque()
        upcoming = iter(chunks)
        for chunk in upcoming:
            pending.append(pool.submit(load_batch, manifest, chunk))
            if len(pending) >= depth:
                break
        while pending:
            future = pending.popleft()
            nxt = next(upcoming, None)
            if nxt is not None:
                pending.append(pool.submit(load_batch, manifest, nxt))
            yield future.result()
