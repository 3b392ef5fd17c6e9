"""
Full toy training run: 16×16 frames, T=8, K=1, 512 sequences, batch 8, 300 epochs.

Deselected by default through the ``slow`` marker; run with ``pytest -m slow``.
"""

import dataclasses
from pathlib import Path

import pytest

from scripts.data_processing.toy_generator import make_toy_dataset, toy_config_from_dict
from scripts.training.config import load_train_config
from scripts.training.evaluation import evaluate
from scripts.training.trainer import train
from src.utils.common.config import ConfigManager

CONFIG_DIR = Path(__file__).resolve().parents[2] / "config"

pytestmark = [pytest.mark.integration, pytest.mark.slow]


@pytest.mark.timeout(3600)
def test_conditional_training_on_toy_data(tmp_path):
    """Test conditioning strength and divergence reduction after 300 epochs."""
    toy = ConfigManager(str(CONFIG_DIR / "toy.yaml")).load(toy_config_from_dict)
    heldout = ConfigManager(str(CONFIG_DIR / "toy_heldout.yaml")).load(toy_config_from_dict)
    make_toy_dataset(dataclasses.replace(toy, output_dir=str(tmp_path / "toy")))
    make_toy_dataset(dataclasses.replace(heldout, output_dir=str(tmp_path / "heldout")))

    config = load_train_config(str(CONFIG_DIR / "train_toy.yaml"))
    config.data = dataclasses.replace(config.data, dataset_path=str(tmp_path / "toy"))
    config.run = dataclasses.replace(config.run, output_dir=str(tmp_path / "run"))
    result = train(config)
    assert result.record.epoch == 300

    initial_checkpoint = tmp_path / "run" / "checkpoints" / "epoch_0000.ckpt"
    initial = evaluate(initial_checkpoint, tmp_path / "heldout", 64)
    final = evaluate(result.final_checkpoint, tmp_path / "heldout", 64)

    assert final.generated_gap >= 0.5 * final.real_gap
    assert final.swap_sensitivity >= 0.99
    assert final.divergence <= 0.5 * initial.divergence
