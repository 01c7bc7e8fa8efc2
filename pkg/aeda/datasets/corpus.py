import os
from dataclasses import dataclass

import numpy as np
import torch
from torchvision.datasets import MNIST

from aeda.utils.utils import make_generator


@dataclass
class GrayscaleCorpus:
    """Grayscale images in [0, 1] (N x H x W) with integer class labels, per split."""

    train_images: torch.Tensor
    train_labels: torch.Tensor
    test_images: torch.Tensor
    test_labels: torch.Tensor
    name: str = "corpus"

    def split(self, split):
        if split == "train":
            return self.train_images, self.train_labels
        if split == "test":
            return self.test_images, self.test_labels
        raise ValueError("{} split not supported".format(split))

    def subsample(self, train_size=None, test_size=None, seed=0):
        """Deterministic random subsets of each split, original order kept."""
        generator = make_generator(seed)

        def pick(images, labels, size):
            if size is None or size >= len(labels):
                return images, labels
            index = torch.randperm(len(labels), generator=generator)[:size].sort().values
            return images[index], labels[index]

        train_images, train_labels = pick(self.train_images, self.train_labels, train_size)
        test_images, test_labels = pick(self.test_images, self.test_labels, test_size)
        return GrayscaleCorpus(train_images, train_labels, test_images, test_labels, self.name)


def load_mnist(data_dir, download=True):
    splits = {}
    for split, train in [("train", True), ("test", False)]:
        mnist = MNIST(data_dir, train=train, download=download)
        splits[split] = (mnist.data.float() / 255.0, mnist.targets.long())
    return GrayscaleCorpus(*splits["train"], *splits["test"], name="mnist")


def load_npz(path):
    """Corpus from an ``.npz`` with x_train, y_train, x_test, y_test (uint8 or float)."""
    arrays = np.load(path)

    def images(key):
        x = torch.from_numpy(arrays[key]).float()
        return x / 255.0 if x.max() > 1.0 else x

    return GrayscaleCorpus(
        images("x_train"),
        torch.from_numpy(arrays["y_train"]).long(),
        images("x_test"),
        torch.from_numpy(arrays["y_test"]).long(),
        name=os.path.basename(path),
    )


def synthetic_digits(num_classes=10, train_per_class=100, test_per_class=20, size=28, seed=0):
    """Small offline stand-in for a digit corpus.

    Each class is a fixed random stroke template; examples are shifted copies
    with faint background noise that stays below the default luminance
    threshold, so colourisation treats it as background.
    """
    generator = make_generator(seed)
    templates = (torch.rand(num_classes, size // 4, size // 4, generator=generator) > 0.6).float()
    templates = torch.nn.functional.interpolate(
        templates.unsqueeze(1), size=(size // 2, size // 2), mode="nearest"
    ).squeeze(1)

    def render(per_class):
        images, labels = [], []
        for c in range(num_classes):
            for _ in range(per_class):
                canvas = torch.rand(size, size, generator=generator) * 0.1
                dy, dx = torch.randint(0, size // 2 + 1, (2,), generator=generator).tolist()
                patch = canvas[dy:dy + size // 2, dx:dx + size // 2]
                canvas[dy:dy + size // 2, dx:dx + size // 2] = torch.maximum(
                    patch, templates[c] * (0.8 + 0.2 * torch.rand(1, generator=generator))
                )
                images.append(canvas)
                labels.append(c)
        return torch.stack(images), torch.tensor(labels, dtype=torch.long)

    train_images, train_labels = render(train_per_class)
    test_images, test_labels = render(test_per_class)
    return GrayscaleCorpus(train_images, train_labels, test_images, test_labels, name="synthetic")


def load_corpus(dataset_config):
    corpus_name = dataset_config.corpus
    if corpus_name == "mnist":
        corpus = load_mnist(dataset_config.data_dir, download=dataset_config.get("download", True))
    elif corpus_name == "synthetic":
        synthetic = dataset_config.synthetic
        corpus = synthetic_digits(
            num_classes=dataset_config.num_classes,
            train_per_class=synthetic.train_per_class,
            test_per_class=synthetic.test_per_class,
            size=synthetic.image_size,
            seed=dataset_config.seed,
        )
    elif corpus_name == "npz":
        corpus = load_npz(dataset_config.npz_path)
    else:
        raise ValueError("{} corpus is not supported.".format(corpus_name))

    return corpus.subsample(
        train_size=dataset_config.get("train_subset"),
        test_size=dataset_config.get("test_subset"),
        seed=dataset_config.seed,
    )
