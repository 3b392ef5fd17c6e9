"""Generate sequences from a checkpoint, conditioned on stored masks."""

from pathlib import Path
from typing import Optional, Union

import numpy as np

from scripts.data_processing.record_store import (
    DatasetManifest,
    RecordStore,
    denormalize,
    load_manifest,
)
from scripts.data_processing.windows import load_batch
from src.utils.common.exceptions import ConfigurationError, DegenerateDataError
from src.utils.common.logging import get_logger, log_performance

from .checkpoint import load_checkpoint
from .config import TrainConfig, experiment_hash
from .evaluation import generate_batch, with_statistics
from .trainer import restore_networks

logger = get_logger(__name__)


@log_performance(logger)
def sample_sequences(
    checkpoint: Union[str, Path],
    mask_source: Union[str, Path],
    count: int,
    seed: int,
    output_dir: Union[str, Path],
    expected_config: Optional[TrainConfig] = None,
) -> DatasetManifest:
    """Write ``count`` generated sequences as a dataset directory.

    Masks are the first ``count`` windows of ``mask_source``; each output
    record pairs the generated grid (in physical units, denormalised with the
    training statistics) with the mask that conditioned it, so the result is
    readable by :func:`read_window`.

    Args:
        checkpoint: Trained checkpoint
        mask_source: Dataset directory providing the conditioning masks
        count: Number of sequences to write
        seed: Noise seed
        output_dir: Destination dataset directory
        expected_config: If given, its experiment hash must match the checkpoint

    Raises:
        ConfigurationError: On a config hash mismatch, a K or frame mismatch,
            or a count the mask source cannot provide
    """
    record = load_checkpoint(checkpoint)
    if expected_config is not None and experiment_hash(expected_config) != record.config_hash:
        raise ConfigurationError(
            f"Checkpoint {checkpoint} does not match the given configuration",
            config_key="config",
        )
    config, networks = restore_networks(record)
    source = with_statistics(load_manifest(mask_source), record)
    if not 1 <= count <= source.record_count:
        raise ConfigurationError(
            f"count must lie in [1, {source.record_count}] for {mask_source}", config_key="count"
        )

    masks = load_batch(source, np.arange(count)).masks
    generated, _ = generate_batch(networks, config, masks, np.random.default_rng(seed))
    physical = denormalize(generated, source)

    store = RecordStore(Path(output_dir))
    entries = [
        store.write_record(f"sample_{i:05d}", physical[i].astype(np.float32), masks[i])
        for i in range(count)
    ]
    store.write_draft_manifest(
        channels=source.channels,
        mask_channels=source.mask_channels,
        height=source.height,
        width=source.width,
        class_names=list(source.class_names),
        records=entries,
        channel_names=list(source.channel_names),
        time_step_hours=source.time_step_hours,
    )
    steps = masks.shape[1]
    logger.info("Wrote %d generated sequences to %s", count, output_dir)
    try:
        return store.build_manifest(steps, steps)
    except DegenerateDataError as exc:
        logger.warning("%s; storing the training statistics instead", exc)
        return store.build_manifest(steps, steps, statistics=(source.mean, source.std))
