"""Checkpoint evaluation against held-out windows.

Three numbers summarise a model:

* the mixed Sinkhorn divergence between generated and real batches, on the
  base cost only so values compare across checkpoints;
* conditional fidelity: mean intensity inside the event mask minus outside,
  for generated and real data, and their ratio;
* mask-swap sensitivity: the share of mask pairs whose swapped conditioning
  changes the output under identical noise.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from scripts.data_processing.record_store import DatasetManifest, load_manifest
from scripts.data_processing.windows import epoch_permutation, load_batch
from src.cot import SequenceFeatures, SinkhornConfig, mixed_sinkhorn_divergence
from src.models import EventGanNetworks
from src.nn import Tensor, no_grad
from src.utils.common.exceptions import ConfigurationError
from src.utils.common.logging import StructuredLogger, get_logger, log_performance

from .checkpoint import CheckpointRecord, load_checkpoint
from .config import TrainConfig
from .trainer import restore_networks

logger = get_logger(__name__)
events = StructuredLogger(__name__)


@dataclass
class EvaluationReport:
    checkpoint: str
    epoch: int
    step: int
    n_samples: int
    divergence: float
    generated_gap: float
    real_gap: float
    fidelity_ratio: float
    swap_sensitivity: float
    swap_pairs: int

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def fidelity_gap(grids: np.ndarray, masks: np.ndarray) -> float:
    """Mean value where any event class is active minus the mean elsewhere.

    Args:
        grids: N×T×C×H×W values
        masks: N×T×K×H×W binary masks

    Returns:
        The gap over all channels; 0.0 if either region is empty
    """
    active = np.broadcast_to(masks.max(axis=2, keepdims=True) > 0, grids.shape)
    if active.all() or not active.any():
        return 0.0
    values = grids.astype(np.float64)
    return float(values[active].mean() - values[~active].mean())


def fidelity_ratio(generated_gap: float, real_gap: float) -> float:
    if real_gap == 0.0:
        return float("nan")
    return generated_gap / real_gap


def with_statistics(manifest: DatasetManifest, record: CheckpointRecord) -> DatasetManifest:
    """The manifest normalised with the training statistics stored in ``record``.

    Raises:
        ConfigurationError: If frame size or K differ from the checkpoint's
    """
    if manifest.frame_shape != record.frame or manifest.mask_channels != record.mask_channels:
        raise ConfigurationError(
            f"Dataset {manifest.root} has frame {manifest.frame_shape} "
            f"and K={manifest.mask_channels}; "
            f"the checkpoint expects {record.frame} and K={record.mask_channels}",
            config_key="data.eval_dataset_path",
        )
    return dataclasses.replace(
        manifest, mean=list(record.dataset["mean"]), std=list(record.dataset["std"])
    )


def generate_batch(
    networks: EventGanNetworks,
    config: TrainConfig,
    masks: np.ndarray,
    rng: np.random.Generator,
    z: Optional[Tensor] = None,
) -> Tuple[np.ndarray, Tensor]:
    """Sample G(z, encode(masks)) without gradients; returns the output and its z."""
    n, steps = masks.shape[:2]
    if z is None:
        z = config.generator.noise.sample(rng, n, steps)
    with no_grad():
        c = networks.encoder(masks)
        fake = networks.generator(z, c)
    return fake.numpy(), z


def swap_sensitivity(
    networks: EventGanNetworks, config: TrainConfig, masks: np.ndarray, rng: np.random.Generator
) -> Tuple[float, int]:
    """Share of cyclic mask pairs (i, i+1) whose outputs differ under the same z.

    Pairs whose masks are identical cannot change the output and are skipped.
    """
    shifted = np.roll(masks, -1, axis=0)
    distinct = np.array([not np.array_equal(a, b) for a, b in zip(masks, shifted)])
    if not distinct.any():
        return float("nan"), 0
    own, z = generate_batch(networks, config, masks, rng)
    swapped, _ = generate_batch(networks, config, shifted, rng, z=z)
    n = masks.shape[0]
    changed = np.sqrt(((own - swapped) ** 2).reshape(n, -1).sum(axis=1)) > 0.0
    return float(changed[distinct].mean()), int(distinct.sum())


class Evaluator:
    """Evaluate one checkpoint on a held-out dataset."""

    def __init__(self, checkpoint: Union[str, Path], dataset_path: Union[str, Path], seed: int = 0):
        """Initialize evaluator.

        Args:
            checkpoint: Checkpoint file to evaluate
            dataset_path: Dataset directory with held-out windows
            seed: Seed for window choice and generator noise
        """
        self.checkpoint = str(checkpoint)
        self.logger = get_logger(__name__)
        self.record = load_checkpoint(checkpoint)
        self.config, self.networks = restore_networks(self.record)
        self.manifest = with_statistics(load_manifest(dataset_path), self.record)
        self.seed = seed

    def divergence(self, real: np.ndarray, masks: np.ndarray, rng: np.random.Generator) -> float:
        """Mixed divergence of one real half-pair against generated data on its masks."""
        half = real.shape[0] // 2
        cfg: SinkhornConfig = self.config.sinkhorn.without_causal_term()
        fake, _ = generate_batch(self.networks, self.config, masks[: 2 * half], rng)
        x = SequenceFeatures(Tensor(real[:half]))
        x_p = SequenceFeatures(Tensor(real[half : 2 * half]))
        y, y_p = SequenceFeatures(Tensor(fake[:half])), SequenceFeatures(Tensor(fake[half:]))
        with no_grad():
            value = mixed_sinkhorn_divergence(x, x_p, y, y_p, cfg)
        return value.item()

    @log_performance(logger)
    def evaluate(self, n_samples: int) -> EvaluationReport:
        """Evaluate on ``n_samples`` windows (rounded down to an even count)."""
        available = self.manifest.record_count
        count = min(n_samples, available) // 2 * 2
        if count < 2:
            raise ConfigurationError(
                f"Evaluation needs at least 2 windows, {self.manifest.root} offers {available}",
                config_key="n_samples",
            )
        indices = np.sort(epoch_permutation(available, self.seed, 0)[:count])
        batch = load_batch(self.manifest, indices)
        rng = np.random.default_rng(self.seed)

        self.networks.eval()
        divergence = self.divergence(batch.grids, batch.masks, rng)
        generated, _ = generate_batch(self.networks, self.config, batch.masks, rng)
        generated_gap = fidelity_gap(generated, batch.masks)
        real_gap = fidelity_gap(batch.grids, batch.masks)
        sensitivity, pairs = swap_sensitivity(self.networks, self.config, batch.masks, rng)

        report = EvaluationReport(
            checkpoint=self.checkpoint,
            epoch=self.record.epoch,
            step=self.record.step,
            n_samples=count,
            divergence=divergence,
            generated_gap=generated_gap,
            real_gap=real_gap,
            fidelity_ratio=fidelity_ratio(generated_gap, real_gap),
            swap_sensitivity=sensitivity,
            swap_pairs=pairs,
        )
        events.info("evaluation_completed", **report.to_dict())
        return report


def evaluate(
    checkpoint: Union[str, Path], dataset_path: Union[str, Path], n_samples: int, seed: int = 0
) -> EvaluationReport:
    """Evaluate ``checkpoint`` on up to ``n_samples`` windows of ``dataset_path``."""
    return Evaluator(checkpoint, dataset_path, seed).evaluate(n_samples)
