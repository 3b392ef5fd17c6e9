"""
Shared fixtures for end-to-end runs on a tiny toy dataset.
"""

import copy
from pathlib import Path
from typing import Any, Callable, Dict

import pytest
import yaml

from scripts.data_processing.toy_generator import ToyGenConfig, make_toy_dataset
from scripts.training.config import TrainConfig, train_config_from_dict
from scripts.training.trainer import TrainResult, train

TINY_TOY: Dict[str, Any] = {
    "height": 8,
    "width": 8,
    "frames": 4,
    "mask_channels": 1,
    "channels": 1,
    "blob_radius": 2.0,
}

# 8 windows in batches of 2 give 2 steps per epoch.
TINY_TRAIN: Dict[str, Any] = {
    "log_level": "INFO",
    "data": {"batch_size": 2},
    "encoder": {"mask_channels": 1, "conv_channels": [4, 8], "lstm_hidden": 8, "context_dim": 6},
    "generator": {
        "noise": {"dim": 4},
        "lstm_hidden": 8,
        "seed_channels": 4,
        "upsample_channels": [4],
    },
    "discriminator": {"conv_channels": [4], "lstm_hidden": 6, "feature_dim": 3},
    "sinkhorn": {"epsilon": 1.0, "iterations": 10},
    "optimizer": {"generator_lr": 1.0e-3, "discriminator_lr": 1.0e-3},
    "seeds": {"init": 0, "shuffle": 1, "noise": 2},
    "run": {"epochs": 3, "checkpoint_every": 1},
}


def tiny_train_document(
    dataset: Path, output_dir: Path, **sections: Dict[str, Any]
) -> Dict[str, Any]:
    """The tiny training document with per-section overrides merged in."""
    document = copy.deepcopy(TINY_TRAIN)
    document["data"]["dataset_path"] = str(dataset)
    document["run"]["output_dir"] = str(output_dir)
    for name, values in sections.items():
        if isinstance(values, dict):
            document.setdefault(name, {}).update(values)
        else:
            document[name] = values
    return document


@pytest.fixture(scope="session")
def toy_datasets(tmp_path_factory) -> Dict[str, Path]:
    """A training split of 8 and a held-out split of 6 toy sequences."""
    root = tmp_path_factory.mktemp("toy")
    train_dir, heldout_dir = root / "train", root / "heldout"
    make_toy_dataset(ToyGenConfig(sequences=8, seed=0, output_dir=str(train_dir), **TINY_TOY))
    make_toy_dataset(ToyGenConfig(sequences=6, seed=1, output_dir=str(heldout_dir), **TINY_TOY))
    return {"train": train_dir, "heldout": heldout_dir}


@pytest.fixture
def train_config(toy_datasets, tmp_path) -> Callable[..., TrainConfig]:
    """Factory for tiny training configs writing below a fresh directory."""

    def factory(run_name: str = "run", **sections: Dict[str, Any]) -> TrainConfig:
        document = tiny_train_document(toy_datasets["train"], tmp_path / run_name, **sections)
        return train_config_from_dict(document)

    return factory


@pytest.fixture
def write_yaml(tmp_path) -> Callable[[str, Dict[str, Any]], Path]:
    """Write a mapping as YAML below the test's temporary directory."""

    def writer(name: str, document: Dict[str, Any]) -> Path:
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(document, f)
        return path

    return writer


@pytest.fixture(scope="session")
def trained_run(toy_datasets, tmp_path_factory) -> TrainResult:
    """One uninterrupted 3-epoch run, checkpointed after every epoch."""
    output_dir = tmp_path_factory.mktemp("trained")
    config = train_config_from_dict(tiny_train_document(toy_datasets["train"], output_dir))
    return train(config)


@pytest.fixture
def tiny_toy() -> Dict[str, Any]:
    """Toy generator settings for 8×8 frames and T=4."""
    return dict(TINY_TOY)


@pytest.fixture
def train_document() -> Callable[..., Dict[str, Any]]:
    """The tiny training document builder, for tests that write config files."""
    return tiny_train_document
