from aeda.datasets.grouped import (
    ADVERSARIAL,
    ORIGINAL,
    GroupedDataset,
    GroupStats,
    LabeledExample,
    group_stats,
)
from aeda.datasets.imbalance import inject_imbalance
from aeda.datasets.cmnist import ColorSpec, build_cmnist, resolve_ratio_plan
from aeda.datasets.corpus import GrayscaleCorpus, load_corpus, synthetic_digits


def build_datasets(dataset_config, logger=None):
    """Train/test GroupedDatasets for a ``dataset_config`` section."""
    corpus = load_corpus(dataset_config)
    return build_cmnist(
        corpus,
        ColorSpec.from_conf(dataset_config),
        resolve_ratio_plan(dataset_config),
        seed=dataset_config.seed,
        exact_ratio=dataset_config.get("exact_ratio", False),
        logger=logger,
    )
