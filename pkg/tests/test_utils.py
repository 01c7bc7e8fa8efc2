import argparse

import pytest
import torch
from omegaconf import OmegaConf

from aeda.utils.utils import (
    config_hash,
    dataset_hash,
    load_conf,
    round_half_up,
    seeded_init,
    state_sha256,
    update_conf_with_cli_params,
)


@pytest.fixture
def config():
    return OmegaConf.create(
        {
            "training": {"experiment_id": None, "seed": 0, "epochs": 60},
            "switch": {"epochs": 10},
            "dataset_config": {"seed": 0, "skew": 1.0, "data_dir": "/data"},
            "env": {"base_dir": "/repo"},
        }
    )


def test_cli_params_search_sections(config):
    params = argparse.Namespace(skew=0.9, missing=None, unknown="x")
    update_conf_with_cli_params(params, config)
    assert config.dataset_config.skew == 0.9
    assert "unknown" not in config.training


def test_dotted_cli_param_updates_one_key(config):
    params = argparse.Namespace(**{"training.epochs": 5})
    update_conf_with_cli_params(params, config)
    assert config.training.epochs == 5
    assert config.switch.epochs == 10


def test_boolean_strings(config):
    OmegaConf.update(config, "training.flag", False)
    update_conf_with_cli_params(argparse.Namespace(flag="True"), config)
    assert config.training.flag is True


def test_config_hash_ignores_env_and_experiment_id(config):
    other = OmegaConf.create(OmegaConf.to_container(config))
    OmegaConf.update(other, "training.experiment_id", "run-2")
    OmegaConf.update(other, "env.base_dir", "/elsewhere")
    assert config_hash(config) == config_hash(other)
    OmegaConf.update(other, "training.seed", 1)
    assert config_hash(config) != config_hash(other)


def test_dataset_hash_ignores_data_dir(config):
    other = OmegaConf.create(OmegaConf.to_container(config))
    OmegaConf.update(other, "dataset_config.data_dir", "/mnt/data")
    assert dataset_hash(config) == dataset_hash(other)
    OmegaConf.update(other, "dataset_config.skew", 0.9)
    assert dataset_hash(config) != dataset_hash(other)


def test_save_dir_override(tmp_path, monkeypatch):
    path = tmp_path / "training.yaml"
    path.write_text("env:\n  base_dir: null\n  save_dir: ${env.base_dir}/save\n")
    monkeypatch.setenv("AEDA_SAVE_DIR", str(tmp_path / "runs"))
    conf = load_conf(str(path))
    assert conf.env.save_dir == str(tmp_path / "runs")
    assert conf.env.base_dir is not None


def test_round_half_up():
    assert [round_half_up(x) for x in (0.5, 1.5, 2.5, 12.4)] == [1, 2, 3, 12]
    assert round_half_up(50 * 0.2 / 0.8) == 13


def test_seeded_init_leaves_global_stream():
    torch.manual_seed(0)
    expected = torch.rand(3)
    torch.manual_seed(0)
    with seeded_init(5):
        first = torch.nn.Linear(2, 2)
    assert torch.equal(torch.rand(3), expected)
    with seeded_init(5):
        second = torch.nn.Linear(2, 2)
    assert state_sha256(first) == state_sha256(second)
