import os
import hashlib
from dataclasses import dataclass
from typing import Dict, Tuple

import torch
from torch.utils.data.dataset import Dataset

from aeda.utils.utils import save_json, load_json


ORIGINAL = "original"
ADVERSARIAL = "adversarial"
PROVENANCES = (ORIGINAL, ADVERSARIAL)


@dataclass(frozen=True)
class LabeledExample:
    pixels: torch.Tensor
    target_label: int
    bias_label: int
    provenance: str
    source_id: str


@dataclass
class GroupStats:
    num_classes: int
    counts: Dict[Tuple[int, int], int]
    bias_ratio: Dict[int, float]

    def class_total(self, t):
        return self.counts[(t, 0)] + self.counts[(t, 1)]

    def empty_cells(self):
        return [cell for cell, n in self.counts.items() if n == 0]

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "counts": {"{},{}".format(t, b): n for (t, b), n in self.counts.items()},
            "bias_ratio": {str(t): r for t, r in self.bias_ratio.items()},
        }

    @classmethod
    def from_dict(cls, content):
        counts = {}
        for key, n in content["counts"].items():
            t, b = key.split(",")
            counts[(int(t), int(b))] = int(n)
        bias_ratio = {int(t): float(r) for t, r in content["bias_ratio"].items()}
        return cls(content["num_classes"], counts, bias_ratio)


def group_stats(dataset):
    """Per-(t, b) counts and per-class fraction of b=1, from a full pass."""
    num_classes = dataset.num_classes
    if len(dataset) > 0:
        cells = torch.bincount(
            dataset.targets * 2 + dataset.biases, minlength=2 * num_classes
        ).tolist()
    else:
        cells = [0] * (2 * num_classes)

    counts = {}
    bias_ratio = {}
    for t in range(num_classes):
        counts[(t, 0)] = cells[2 * t]
        counts[(t, 1)] = cells[2 * t + 1]
        total = counts[(t, 0)] + counts[(t, 1)]
        if total > 0:
            bias_ratio[t] = counts[(t, 1)] / total
    return GroupStats(num_classes, counts, bias_ratio)


class GroupedDataset(Dataset):
    """Examples with target label t and bias label b, stored as stacked tensors.

    Items are ``(pixels, target, bias, index)`` so a DataLoader batch can be
    mapped back to source ids. Examples are deduplicated on
    ``(source_id, provenance)``, keeping the first occurrence.
    """

    def __init__(
        self,
        pixels,
        targets,
        biases,
        source_ids,
        provenance=None,
        split="train",
        num_classes=10,
        metadata=None,
        source_biases=None,
    ):
        super().__init__()
        if provenance is None:
            provenance = [ORIGINAL] * len(source_ids)
        if not (len(pixels) == len(targets) == len(biases) == len(source_ids) == len(provenance)):
            raise ValueError("pixels, labels, source ids and provenance differ in length")

        keep = self._first_occurrences(source_ids, provenance)
        index = torch.tensor(keep, dtype=torch.long)

        self.pixels = torch.as_tensor(pixels, dtype=torch.float32)[index].contiguous()
        self.targets = torch.as_tensor(targets, dtype=torch.long)[index]
        self.biases = torch.as_tensor(biases, dtype=torch.long)[index]
        self.source_ids = [source_ids[i] for i in keep]
        self.provenance = [provenance[i] for i in keep]
        # pre-attack bias labels; equal to ``biases`` for original examples
        if source_biases is None:
            self.source_biases = self.biases.clone()
        else:
            self.source_biases = torch.as_tensor(source_biases, dtype=torch.long)[index]
        self.split = split
        self.num_classes = num_classes
        self.metadata = dict(metadata or {})
        self._validate()

    @staticmethod
    def _first_occurrences(source_ids, provenance):
        seen = set()
        keep = []
        for i, key in enumerate(zip(source_ids, provenance)):
            if key not in seen:
                seen.add(key)
                keep.append(i)
        return keep

    def _validate(self):
        if self.split not in ("train", "test"):
            raise ValueError("split must be train or test, got {}".format(self.split))
        if len(self) == 0:
            return
        if self.pixels.dim() != 4 or self.pixels.size(1) != 3:
            raise ValueError(
                "pixels must be N x 3 x H x W, got {}".format(tuple(self.pixels.shape))
            )
        if not torch.isfinite(self.pixels).all():
            raise ValueError("pixel values must be finite")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        if self.targets.min() < 0 or self.targets.max() >= self.num_classes:
            raise ValueError("target labels outside 0..{}".format(self.num_classes - 1))
        if not set(self.biases.unique().tolist()) <= {0, 1}:
            raise ValueError("bias labels must be 0 or 1")
        unknown = set(self.provenance) - set(PROVENANCES)
        if unknown:
            raise ValueError("unknown provenance {}".format(sorted(unknown)))

    def __len__(self):
        return len(self.source_ids)

    def __getitem__(self, idx):
        return self.pixels[idx], self.targets[idx], self.biases[idx], idx

    def example(self, idx):
        return LabeledExample(
            pixels=self.pixels[idx],
            target_label=int(self.targets[idx]),
            bias_label=int(self.biases[idx]),
            provenance=self.provenance[idx],
            source_id=self.source_ids[idx],
        )

    @property
    def group_counts(self):
        return group_stats(self).counts

    @property
    def bias_ratio(self):
        return group_stats(self).bias_ratio

    def index_of(self, source_ids, provenance=ORIGINAL):
        lookup = {
            sid: i
            for i, (sid, prov) in enumerate(zip(self.source_ids, self.provenance))
            if prov == provenance
        }
        return [lookup[sid] for sid in source_ids]

    def subset(self, indices, metadata=None):
        indices = list(indices)
        index = torch.tensor(indices, dtype=torch.long)
        return GroupedDataset(
            self.pixels[index],
            self.targets[index],
            self.biases[index],
            [self.source_ids[i] for i in indices],
            provenance=[self.provenance[i] for i in indices],
            split=self.split,
            num_classes=self.num_classes,
            metadata=self.metadata if metadata is None else metadata,
            source_biases=self.source_biases[index],
        )

    def with_pixels(self, pixels, biases=None, provenance=ADVERSARIAL):
        """Same examples with replaced pixels (and optionally bias labels)."""
        return GroupedDataset(
            pixels,
            self.targets.clone(),
            self.biases.clone() if biases is None else biases,
            list(self.source_ids),
            provenance=[provenance] * len(self),
            split=self.split,
            num_classes=self.num_classes,
            metadata=self.metadata,
            source_biases=self.source_biases.clone(),
        )

    @classmethod
    def concat(cls, datasets, metadata=None):
        datasets = [d for d in datasets if d is not None]
        first = datasets[0]
        return cls(
            torch.cat([d.pixels for d in datasets]),
            torch.cat([d.targets for d in datasets]),
            torch.cat([d.biases for d in datasets]),
            [sid for d in datasets for sid in d.source_ids],
            provenance=[p for d in datasets for p in d.provenance],
            split=first.split,
            num_classes=first.num_classes,
            metadata=first.metadata if metadata is None else metadata,
            source_biases=torch.cat([d.source_biases for d in datasets]),
        )

    def sorted_by_source(self):
        order = sorted(range(len(self)), key=lambda i: (self.source_ids[i], self.provenance[i]))
        return self.subset(order)

    def manifest_records(self, pixel_file):
        return [
            {
                "source_id": sid,
                "split": self.split,
                "t": int(t),
                "b": int(b),
                "b_source": int(b_source),
                "provenance": prov,
                "pixels": "{}#{}".format(pixel_file, row),
            }
            for row, (sid, t, b, b_source, prov) in enumerate(
                zip(
                    self.source_ids,
                    self.targets.tolist(),
                    self.biases.tolist(),
                    self.source_biases.tolist(),
                    self.provenance,
                )
            )
        ]

    def save(self, directory, name=None):
        """Write ``<name>_manifest.json`` and ``<name>_pixels.pt``, ordered by source id."""
        name = name or self.split
        ordered = self.sorted_by_source()
        pixel_file = "{}_pixels.pt".format(name)
        os.makedirs(directory, exist_ok=True)
        torch.save(ordered.pixels, os.path.join(directory, pixel_file))
        save_json(
            os.path.join(directory, "{}_manifest.json".format(name)),
            {
                "num_classes": ordered.num_classes,
                "split": ordered.split,
                "metadata": ordered.metadata,
                "stats": group_stats(ordered).to_dict(),
                "examples": ordered.manifest_records(pixel_file),
            },
        )
        return ordered

    @classmethod
    def load(cls, directory, name):
        manifest = load_json(os.path.join(directory, "{}_manifest.json".format(name)))
        records = manifest["examples"]
        pixels = torch.load(os.path.join(directory, "{}_pixels.pt".format(name)))
        rows = [int(record["pixels"].rsplit("#", 1)[1]) for record in records]
        return cls(
            pixels[torch.tensor(rows, dtype=torch.long)] if records else pixels,
            [record["t"] for record in records],
            [record["b"] for record in records],
            [record["source_id"] for record in records],
            provenance=[record["provenance"] for record in records],
            split=manifest["split"],
            num_classes=manifest["num_classes"],
            metadata=manifest["metadata"],
            source_biases=[record.get("b_source", record["b"]) for record in records],
        )

    def manifest_hash(self):
        ordered = self.sorted_by_source()
        digest = hashlib.sha256()
        for record in ordered.manifest_records("pixels"):
            digest.update(repr(sorted(record.items())).encode("utf-8"))
        digest.update(ordered.pixels.numpy().tobytes())
        return digest.hexdigest()

