"""Typed training configuration.

A run is described by one YAML or JSON document with the sections below;
``run`` and the logging level are bookkeeping and stay out of the experiment
hash, so moving a run directory or changing its cadence still resumes.
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

from src.cot import SinkhornConfig
from src.models import DiscriminatorSpec, GeneratorSpec, MaskEncoderSpec
from src.utils.common.config import (
    TRAIN_ENV_MAPPINGS,
    build_dataclass,
    config_hash,
    config_to_dict,
    enforce_rules,
    load_config,
)
from src.utils.common.validation import (
    validate_choice,
    validate_int_at_least,
    validate_non_negative_number,
    validate_not_empty,
    validate_positive_int,
    validate_positive_number,
    validate_unit_interval,
)

HASH_EXCLUDED_SECTIONS = ("run", "log_level")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass
class DataConfig:
    dataset_path: str = "data/toy"
    eval_dataset_path: Optional[str] = None
    batch_size: int = 8
    prefetch_workers: int = 0
    verify_checksums: bool = False

    def __post_init__(self) -> None:
        enforce_rules(
            "data",
            asdict(self),
            {
                "dataset_path": [validate_not_empty],
                # the martingale penalty averages over the batch
                "batch_size": [validate_int_at_least(2)],
                "prefetch_workers": [validate_int_at_least(0)],
            },
        )


@dataclass
class OptimizerConfig:
    """AdamW hyperparameters, shared by both players unless the rates differ."""

    generator_lr: float = 1e-4
    discriminator_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    def __post_init__(self) -> None:
        unit = validate_unit_interval(open_low=False, open_high=True)
        enforce_rules(
            "optimizer",
            asdict(self),
            {
                "generator_lr": [validate_positive_number],
                "discriminator_lr": [validate_positive_number],
                "beta1": [unit],
                "beta2": [unit],
                "eps": [validate_positive_number],
                "weight_decay": [validate_non_negative_number],
            },
        )


@dataclass
class SeedConfig:
    """Independent streams: weight init, epoch shuffling, generator noise."""

    init: int = 0
    shuffle: int = 1
    noise: int = 2

    def __post_init__(self) -> None:
        enforce_rules(
            "seeds",
            asdict(self),
            {name: [validate_int_at_least(0)] for name in ("init", "shuffle", "noise")},
        )


@dataclass
class RunConfig:
    output_dir: str = "runs/toy"
    epochs: int = 300
    checkpoint_every: int = 10
    resume_from: Optional[str] = None

    def __post_init__(self) -> None:
        enforce_rules(
            "run",
            asdict(self),
            {
                "output_dir": [validate_not_empty],
                "epochs": [validate_positive_int],
                "checkpoint_every": [validate_positive_int],
            },
        )


@dataclass
class TrainConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: MaskEncoderSpec = field(default_factory=MaskEncoderSpec)
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    discriminator: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    run: RunConfig = field(default_factory=RunConfig)
    log_level: str = "INFO"

    def __post_init__(self) -> None:
        enforce_rules(
            "", {"log_level": self.log_level}, {"log_level": [validate_choice(LOG_LEVELS)]}
        )

    @property
    def experiment_hash(self) -> str:
        return experiment_hash(self)

    def to_dict(self) -> Dict[str, Any]:
        return config_to_dict(self)


def experiment_hash(config: TrainConfig) -> str:
    """Hash of everything that changes the training trajectory.

    ``data.prefetch_workers`` is excluded as well: prefetching never changes
    batch order.
    """
    data = config_to_dict(config)
    data["data"] = {k: v for k, v in data["data"].items() if k != "prefetch_workers"}
    return config_hash(data, exclude=HASH_EXCLUDED_SECTIONS)


def train_config_from_dict(data: Dict[str, Any]) -> TrainConfig:
    """Build a TrainConfig from a parsed document (missing sections use defaults)."""
    return build_dataclass(TrainConfig, data)


def load_train_config(path: Optional[str]) -> TrainConfig:
    """Load a TrainConfig from YAML/JSON with ``EEGAN_*`` environment overrides."""
    return load_config(path, train_config_from_dict, TRAIN_ENV_MAPPINGS)
