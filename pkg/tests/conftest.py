import pytest
import torch
from omegaconf import OmegaConf

from aeda.datasets import GroupedDataset
from aeda.models import CompositeClassifier
from aeda.trainers import TrainConfig
from aeda.utils.utils import default_conf, make_generator, seeded_init


NUM_CLASSES = 4
IMAGE_SIZE = 8


def make_dataset(counts, split="train", num_classes=NUM_CLASSES, size=IMAGE_SIZE, seed=0):
    """GroupedDataset with ``counts[(t, b)]`` random images per cell, in cell order."""
    generator = make_generator(seed)
    targets, biases = [], []
    for (t, b), n in sorted(counts.items()):
        targets += [t] * n
        biases += [b] * n
    n = len(targets)
    pixels = torch.rand(n, 3, size, size, generator=generator)
    # colour the first channel by bias group so the bias is learnable
    pixels[:, 0] = 0.5 * pixels[:, 0] + 0.5 * torch.tensor(biases, dtype=torch.float32)[:, None, None]
    source_ids = ["{}-{:06d}".format(split, i) for i in range(n)]
    return GroupedDataset(pixels, targets, biases, source_ids, split=split, num_classes=num_classes)


def balanced_counts(per_cell, num_classes=NUM_CLASSES):
    return {(t, b): per_cell for t in range(num_classes) for b in (0, 1)}


def skewed_counts(major, minor, num_classes=NUM_CLASSES):
    """First half of the classes leans to b=0, the second half to b=1."""
    counts = {}
    for t in range(num_classes):
        lean = 0 if t < num_classes // 2 else 1
        counts[(t, lean)] = major
        counts[(t, 1 - lean)] = minor
    return counts


def tiny_model_config(num_classes=NUM_CLASSES):
    return OmegaConf.create(
        {
            "model_name": "composite",
            "backbone": "tiny",
            "num_classes": num_classes,
            "in_channels": 3,
            "feature_dim": 8,
            "tiny": {"channels": 4, "pooled_size": 2},
            "small_cnn": {"channels": [4, 8]},
        }
    )


@pytest.fixture
def model_config():
    return tiny_model_config()


@pytest.fixture
def make_model(model_config):
    def build(seed=0):
        with seeded_init(seed):
            return CompositeClassifier(model_config)

    return build


@pytest.fixture
def train_config():
    def build(**overrides):
        fields = dict(
            method="original",
            epochs=2,
            batch_size=16,
            early_stop=False,
            min_epochs=0,
            seed=0,
            lr_milestones=(0.5,),
        )
        fields.update(overrides)
        return TrainConfig(**fields)

    return build


@pytest.fixture
def skewed_train():
    return make_dataset(skewed_counts(24, 8))


@pytest.fixture
def fair_test():
    return make_dataset(balanced_counts(6), split="test", seed=1)


@pytest.fixture
def run_config(tmp_path):
    """Full merged config for a fast run on the synthetic corpus, saved under ``tmp_path``."""
    config = default_conf()
    overrides = {
        "env.save_dir": str(tmp_path),
        "env.experiments_dir": str(tmp_path / "experiments"),
        "training.epochs": 2,
        "training.dataloader.batch_size": 32,
        "training.early_stop.enabled": False,
        "attack.steps": 2,
        "probe.probe_epochs": 1,
        "dataset_config.corpus": "synthetic",
        "dataset_config.num_classes": NUM_CLASSES,
        "dataset_config.skew": 0.75,
        "dataset_config.synthetic.train_per_class": 40,
        "dataset_config.synthetic.test_per_class": 6,
        "dataset_config.synthetic.image_size": 12,
        "model_config.backbone": "tiny",
        "model_config.feature_dim": 8,
        "model_config.tiny.channels": 4,
        "model_config.tiny.pooled_size": 2,
    }
    for key, value in overrides.items():
        OmegaConf.update(config, key, value)
    return config
