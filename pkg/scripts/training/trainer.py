"""Alternating COT-GAN training loop with checkpointing and resume."""

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from scripts.data_processing.record_store import DatasetManifest, load_manifest
from scripts.data_processing.windows import WindowBatch, batch_iter
from src.cot import LossTerms, discriminator_loss, generator_loss
from src.models import EventGanNetworks
from src.nn import Tensor, no_grad
from src.utils.common.config import ConfigManager
from src.utils.common.exceptions import ConfigurationError, NumericError
from src.utils.common.logging import StructuredLogger, get_logger, log_performance

from .checkpoint import CheckpointRecord, load_checkpoint, save_checkpoint
from .config import TrainConfig, experiment_hash, train_config_from_dict
from .metrics import MetricLog, MetricRecord
from .optimizer import AdamW, AdamWHyper

logger = get_logger(__name__)
events = StructuredLogger(__name__)

CONFIG_NAME = "config.json"
METRICS_NAME = "metrics.jsonl"
FINAL_CHECKPOINT = "final.ckpt"
CHECKPOINT_DIR = "checkpoints"


def steps_per_epoch(window_count: int, batch_size: int) -> int:
    """Two batches feed every step; a trailing odd batch is skipped."""
    return (window_count // batch_size) // 2


def dataset_info(manifest: DatasetManifest) -> Dict[str, Any]:
    """Dataset facts a checkpoint needs to sample without the training data."""
    return {
        "mean": list(manifest.mean),
        "std": list(manifest.std),
        "frame": list(manifest.frame_shape),
        "mask_channels": manifest.mask_channels,
        "window_T": manifest.window_T,
        "class_names": list(manifest.class_names),
        "channel_names": list(manifest.channel_names),
        "time_step_hours": manifest.time_step_hours,
    }


def build_networks(
    config: TrainConfig, frame: Tuple[int, int, int], mask_channels: int
) -> EventGanNetworks:
    """Networks for ``config``, checked against the dataset's K."""
    if config.encoder.mask_channels != mask_channels:
        raise ConfigurationError(
            f"encoder.mask_channels={config.encoder.mask_channels} "
            f"but the data has K={mask_channels}",
            config_key="encoder.mask_channels",
        )
    return EventGanNetworks(
        config.encoder, config.generator, config.discriminator, frame, config.seeds.init
    )


def restore_networks(record: CheckpointRecord) -> Tuple[TrainConfig, EventGanNetworks]:
    """Rebuild the networks stored in a checkpoint, in eval mode."""
    config = train_config_from_dict(record.config)
    networks = build_networks(config, record.frame, record.mask_channels)
    networks.load_state_dict(record.model)
    networks.eval()
    return config, networks


@dataclass
class TrainResult:
    final_checkpoint: Path
    record: CheckpointRecord
    metrics: MetricLog


class CotGanTrainer:
    """Owns networks, optimizers, noise stream and run directory of one run.

    One step draws two consecutive real batches, takes one ascent step for
    the mask encoder and discriminator pair, then one descent step for the
    generator on the same noise.
    """

    def __init__(self, config: TrainConfig):
        """Initialize trainer.

        Args:
            config: Validated training configuration

        Raises:
            DataProcessingError: If the dataset cannot be loaded
            ConfigurationError: If the configuration does not fit the dataset
        """
        self.config = config
        self.logger = get_logger(__name__)
        self.output_dir = Path(config.run.output_dir)
        self.manifest = load_manifest(config.data.dataset_path, verify=config.data.verify_checksums)
        self.networks = build_networks(
            config, self.manifest.frame_shape, self.manifest.mask_channels
        )

        opt = config.optimizer
        self.g_opt = AdamW(
            self.networks.generator_parameters(),
            AdamWHyper(opt.generator_lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay),
        )
        self.d_opt = AdamW(
            self.networks.discriminator_parameters(),
            AdamWHyper(opt.discriminator_lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay),
        )
        self.noise_rng = np.random.default_rng(config.seeds.noise)
        self.config_hash = experiment_hash(config)
        self.metrics = MetricLog(self.output_dir / METRICS_NAME)
        self.epoch = 0
        self.step = 0
        self.last_checkpoint: Optional[Path] = None
        self._started = time.perf_counter()

        self.steps_per_epoch = steps_per_epoch(
            self.manifest.record_count, config.data.batch_size
        )
        if self.steps_per_epoch < 1:
            raise ConfigurationError(
                f"{self.manifest.record_count} windows give fewer than two batches of "
                f"{config.data.batch_size}",
                config_key="data.batch_size",
            )

    # -- state ----------------------------------------------------------------

    def checkpoint_record(self) -> CheckpointRecord:
        return CheckpointRecord(
            epoch=self.epoch,
            step=self.step,
            config=self.config.to_dict(),
            config_hash=self.config_hash,
            model=self.networks.state_dict(),
            optimizers={
                "generator": self.g_opt.state_dict(),
                "discriminator": self.d_opt.state_dict(),
            },
            optimizer_steps={
                "generator": self.g_opt.step_count,
                "discriminator": self.d_opt.step_count,
            },
            rng_state={"noise": self.noise_rng.bit_generator.state},
            dataset=dataset_info(self.manifest),
        )

    def save(self, path: Path) -> CheckpointRecord:
        record = self.checkpoint_record()
        save_checkpoint(path, record)
        self.last_checkpoint = path
        return record

    def checkpoint_path(self, epoch: int) -> Path:
        return self.output_dir / CHECKPOINT_DIR / f"epoch_{epoch:04d}.ckpt"

    def resume(self, path: str) -> None:
        """Restore the full training state from a checkpoint of the same experiment."""
        record = load_checkpoint(path)
        if record.config_hash != self.config_hash:
            raise ConfigurationError(
                f"Checkpoint {path} was written by a different configuration "
                f"({record.config_hash[:12]} != {self.config_hash[:12]})",
                config_key="run.resume_from",
            )
        self.networks.load_state_dict(record.model)
        self.g_opt.load_state_dict(
            record.optimizers.get("generator", {}), record.optimizer_steps.get("generator", 0)
        )
        self.d_opt.load_state_dict(
            record.optimizers.get("discriminator", {}),
            record.optimizer_steps.get("discriminator", 0),
        )
        self.noise_rng.bit_generator.state = record.rng_state["noise"]
        self.epoch, self.step = record.epoch, record.step
        self.metrics.truncate_after(self.step)
        self.last_checkpoint = Path(path)
        self.logger.info("Resumed from %s at epoch %d, step %d", path, self.epoch, self.step)

    # -- steps ----------------------------------------------------------------

    def _check_finite(self, terms: LossTerms, which: str, step: int) -> None:
        value = terms.loss.item()
        if not np.isfinite(value):
            raise NumericError(f"{which} became non-finite ({value})", operation=which, step=step)

    def train_step(self, batch: WindowBatch, batch_p: WindowBatch, epoch: int) -> MetricRecord:
        """One discriminator ascent step followed by one generator descent step."""
        step = self.step + 1
        nets, cfg = self.networks, self.config.sinkhorn
        n, steps = batch.grids.shape[:2]
        noise = self.config.generator.noise
        real, real_p = Tensor(batch.grids), Tensor(batch_p.grids)
        z = noise.sample(self.noise_rng, n, steps)
        z_p = noise.sample(self.noise_rng, n, steps)

        try:
            c = nets.encoder(batch.masks)
            c_p = nets.encoder(batch_p.masks)
            with no_grad():
                fake = nets.generator(z, c.detach())
                fake_p = nets.generator(z_p, c_p.detach())
            d_terms = discriminator_loss(
                real, real_p, fake, fake_p, c, c_p, nets.discriminators, cfg
            )
            self._check_finite(d_terms, "discriminator_loss", step)
            self.d_opt.zero_grad()
            d_terms.loss.backward()
            self.d_opt.step()

            c, c_p = c.detach(), c_p.detach()
            fake = nets.generator(z, c)
            fake_p = nets.generator(z_p, c_p)
            g_terms = generator_loss(real, real_p, fake, fake_p, c, c_p, nets.discriminators, cfg)
            self._check_finite(g_terms, "generator_loss", step)
            self.g_opt.zero_grad()
            g_terms.loss.backward()
            self.g_opt.step()
        except NumericError as exc:
            if exc.step is None:
                exc.step = step
                exc.details["step"] = step
            raise

        self.step = step
        return MetricRecord(
            epoch=epoch,
            step=step,
            g_loss=g_terms.loss.item(),
            d_loss=d_terms.loss.item(),
            divergence=g_terms.divergence.item(),
            penalty=d_terms.penalty.item(),
            wall_time=time.perf_counter() - self._started,
        )

    def run_epoch(self) -> None:
        epoch = self.epoch + 1
        data = self.config.data
        self.networks.train()
        batches = batch_iter(
            self.manifest,
            data.batch_size,
            self.config.seeds.shuffle,
            self.epoch,
            data.prefetch_workers,
        )
        for batch, batch_p in zip(batches, batches):
            self.metrics.append(self.train_step(batch, batch_p, epoch))
        self.epoch = epoch

        recent = self.metrics.records[-self.steps_per_epoch :]
        events.info(
            "epoch_completed",
            epoch=epoch,
            step=self.step,
            g_loss=float(np.mean([r.g_loss for r in recent])),
            d_loss=float(np.mean([r.d_loss for r in recent])),
            divergence=float(np.mean([r.divergence for r in recent])),
            penalty=float(np.mean([r.penalty for r in recent])),
        )

    @log_performance(logger)
    def train(self) -> TrainResult:
        """Run (or continue) training up to ``run.epochs`` and write ``final.ckpt``.

        Raises:
            NumericError: On a non-finite loss or gradient; checkpoints already
                written are left untouched
        """
        run = self.config.run
        self.output_dir.mkdir(parents=True, exist_ok=True)
        ConfigManager(str(self.output_dir / CONFIG_NAME)).save_config(self.config)

        if run.resume_from:
            self.resume(run.resume_from)
        else:
            self.metrics.truncate_after(0)
            self.save(self.checkpoint_path(0))
        self.logger.info(
            "Training %d epochs of %d steps on %d windows from %s",
            run.epochs - self.epoch,
            self.steps_per_epoch,
            self.manifest.record_count,
            self.manifest.root,
        )

        try:
            while self.epoch < run.epochs:
                self.run_epoch()
                if self.epoch % run.checkpoint_every == 0:
                    self.save(self.checkpoint_path(self.epoch))
        except NumericError as exc:
            self.logger.error(
                "Training aborted at step %s: %s; last good checkpoint: %s",
                exc.step,
                exc.message,
                self.last_checkpoint,
            )
            raise

        final = self.output_dir / FINAL_CHECKPOINT
        record = self.save(final)
        return TrainResult(final_checkpoint=final, record=record, metrics=self.metrics)


def train(config: TrainConfig) -> TrainResult:
    """Train a model as described by ``config``; fully determined by its seeds."""
    return CotGanTrainer(config).train()
