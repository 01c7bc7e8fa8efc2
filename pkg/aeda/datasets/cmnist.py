from dataclasses import dataclass, field
from typing import List, Sequence

import torch
from omegaconf import OmegaConf

from aeda.datasets.grouped import GroupedDataset, group_stats
from aeda.datasets.imbalance import inject_imbalance
from aeda.utils.errors import ConfigError
from aeda.utils.utils import make_generator


RED = (0.86, 0.08, 0.08)
BROWN = (0.55, 0.35, 0.17)
BACKGROUND_MODES = ("replace-background", "tint")


@dataclass
class ColorSpec:
    color_map: List[Sequence[float]] = field(default_factory=lambda: [RED, BROWN])
    background_mode: str = "replace-background"
    luminance_threshold: float = 0.2

    def __post_init__(self):
        self.color_map = [tuple(float(c) for c in rgb) for rgb in self.color_map]
        if len(self.color_map) != 2:
            raise ConfigError("color_map needs exactly one RGB triple per bias label")
        for rgb in self.color_map:
            if len(rgb) != 3 or min(rgb) < 0.0 or max(rgb) > 1.0:
                raise ConfigError("colors must be RGB triples in [0, 1], got {}".format(rgb))
        if self.color_map[0] == self.color_map[1]:
            raise ConfigError("the two background colors must differ")
        if self.background_mode not in BACKGROUND_MODES:
            raise ConfigError("background_mode must be one of {}".format(BACKGROUND_MODES))

    @classmethod
    def from_conf(cls, dataset_config):
        return cls(
            color_map=OmegaConf.to_container(dataset_config.color_map),
            background_mode=dataset_config.background_mode,
            luminance_threshold=dataset_config.luminance_threshold,
        )

    def colorize(self, images, biases):
        """Colour N x H x W grayscale digits into N x 3 x H x W by bias label."""
        colors = torch.tensor(self.color_map, dtype=torch.float32)[biases]
        colors = colors[:, :, None, None]
        gray = images.unsqueeze(1).expand(-1, 3, -1, -1)
        if self.background_mode == "replace-background":
            background = (images < self.luminance_threshold).unsqueeze(1)
            out = torch.where(background, colors.expand_as(gray), gray)
        else:
            # stroke stays white, darker pixels take on the colour
            out = gray + (1.0 - gray) * colors
        return out.clamp(0.0, 1.0)


def resolve_ratio_plan(dataset_config):
    """Per-class fraction of b=1, from an explicit list or the ``skew`` shorthand."""
    num_classes = dataset_config.num_classes
    if dataset_config.get("ratio_plan") is not None:
        plan = [float(r) for r in dataset_config.ratio_plan]
    else:
        skew = float(dataset_config.skew)
        half = num_classes // 2
        plan = [1.0 - skew] * half + [skew] * (num_classes - half)
    validate_ratio_plan(plan, num_classes)
    return plan


def validate_ratio_plan(ratio_plan, num_classes):
    if len(ratio_plan) != num_classes:
        raise ConfigError(
            "ratio_plan has {} entries for {} classes".format(len(ratio_plan), num_classes)
        )
    for t, rho in enumerate(ratio_plan):
        if not 0.0 <= rho <= 1.0:
            raise ConfigError("ratio for class {} must lie in [0, 1], got {}".format(t, rho))


def _source_ids(split, n):
    return ["{}-{:06d}".format(split, i) for i in range(n)]


def build_cmnist(corpus, color_spec, ratio_plan, seed, exact_ratio=False, logger=None):
    """Colour a grayscale digit corpus into a bias-correlated train split and a fair test split.

    Training examples of class t get b=1 with probability ratio_plan[t]. The
    test split gives every class both colours in equal proportion.
    """
    num_classes = len(ratio_plan)
    validate_ratio_plan(ratio_plan, num_classes)
    generator = make_generator(seed)

    images, labels = corpus.split("train")
    rho = torch.tensor(ratio_plan, dtype=torch.float32)[labels]
    train_biases = (torch.rand(len(labels), generator=generator) < rho).long()
    train = GroupedDataset(
        color_spec.colorize(images, train_biases),
        labels,
        train_biases,
        _source_ids("train", len(labels)),
        split="train",
        num_classes=num_classes,
        metadata={"ratio_plan": list(ratio_plan), "seed": seed},
    )
    if exact_ratio:
        train = inject_imbalance(train, ratio_plan, seed)

    images, labels = corpus.split("test")
    test_biases = torch.zeros(len(labels), dtype=torch.long)
    for t in range(num_classes):
        members = (labels == t).nonzero(as_tuple=True)[0]
        order = members[torch.randperm(len(members), generator=generator)]
        test_biases[order[len(order) // 2:]] = 1
    test = GroupedDataset(
        color_spec.colorize(images, test_biases),
        labels,
        test_biases,
        _source_ids("test", len(labels)),
        split="test",
        num_classes=num_classes,
        metadata={"seed": seed},
    )

    stats = group_stats(train)
    empty_classes = [t for t in range(num_classes) if stats.class_total(t) == 0]
    if empty_classes:
        train.metadata["empty_classes"] = empty_classes
        if logger is not None:
            logger.warn("classes {} have no training examples".format(empty_classes))
    train.metadata["empty_cells"] = ["{},{}".format(t, b) for t, b in stats.empty_cells()]
    return train, test
