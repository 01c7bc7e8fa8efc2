from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from scipy import stats
from sklearn import metrics
from torch.utils.data import DataLoader

from aeda.models.composite import eval_mode, forward_target


def _cell_key(cell):
    return "{},{}".format(*cell)


def _parse_cell(key):
    t, b = key.split(",")
    return int(t), int(b)


@dataclass
class BiasReport:
    """Equality-of-opportunity bias, bACC and per-group confusion of one prediction pass.

    Probabilities are raw fractions; ``display`` scales them to percentage points.
    Classes missing a bias group have no bias value and are listed in
    ``undefined_classes``; empty cells are listed in ``excluded_cells``.
    """

    num_classes: int
    per_class_bias: Dict[int, float]
    overall_bias: float
    bacc: Optional[float]
    group_accuracy: Dict[Tuple[int, int], float]
    n_per_cell: Dict[Tuple[int, int], int]
    correct_per_cell: Dict[Tuple[int, int], int]
    group_confusion: Dict[int, np.ndarray]
    undefined_classes: List[int] = field(default_factory=list)
    excluded_cells: List[Tuple[int, int]] = field(default_factory=list)
    transferability: Dict[int, float] = field(default_factory=dict)

    def display(self):
        return {
            "bACC": None if self.bacc is None else round(self.bacc, 2),
            "bias": round(100.0 * self.overall_bias, 2),
        }

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "per_class_bias": {str(t): v for t, v in self.per_class_bias.items()},
            "overall_bias": self.overall_bias,
            "bacc": self.bacc,
            "group_accuracy": {_cell_key(c): v for c, v in self.group_accuracy.items()},
            "n_per_cell": {_cell_key(c): n for c, n in self.n_per_cell.items()},
            "correct_per_cell": {_cell_key(c): n for c, n in self.correct_per_cell.items()},
            "group_confusion": {str(b): m.tolist() for b, m in self.group_confusion.items()},
            "undefined_classes": list(self.undefined_classes),
            "excluded_cells": [_cell_key(c) for c in self.excluded_cells],
            "transferability": {str(m): r for m, r in self.transferability.items()},
        }

    @classmethod
    def from_dict(cls, content):
        return cls(
            num_classes=content["num_classes"],
            per_class_bias={int(t): v for t, v in content["per_class_bias"].items()},
            overall_bias=content["overall_bias"],
            bacc=content["bacc"],
            group_accuracy={_parse_cell(k): v for k, v in content["group_accuracy"].items()},
            n_per_cell={_parse_cell(k): n for k, n in content["n_per_cell"].items()},
            correct_per_cell={_parse_cell(k): n for k, n in content["correct_per_cell"].items()},
            group_confusion={int(b): np.array(m) for b, m in content["group_confusion"].items()},
            undefined_classes=list(content["undefined_classes"]),
            excluded_cells=[_parse_cell(k) for k in content["excluded_cells"]],
            transferability={int(m): r for m, r in content.get("transferability", {}).items()},
        )


def bias_report_from_predictions(targets, biases, predictions, num_classes):
    """Build a BiasReport from aligned label and prediction vectors."""
    targets = np.asarray(targets, dtype=np.int64)
    biases = np.asarray(biases, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = list(range(num_classes))

    group_confusion = {}
    for b in (0, 1):
        members = biases == b
        if members.any():
            group_confusion[b] = metrics.confusion_matrix(
                targets[members], predictions[members], labels=labels
            )
        else:
            group_confusion[b] = np.zeros((num_classes, num_classes), dtype=np.int64)

    n_per_cell, correct_per_cell, group_accuracy = {}, {}, {}
    excluded_cells = []
    for t in labels:
        for b in (0, 1):
            n = int(group_confusion[b][t].sum())
            correct = int(group_confusion[b][t, t])
            n_per_cell[(t, b)] = n
            correct_per_cell[(t, b)] = correct
            if n > 0:
                group_accuracy[(t, b)] = correct / n
            else:
                excluded_cells.append((t, b))

    per_class_bias = {}
    undefined_classes = []
    for t in labels:
        if (t, 0) in group_accuracy and (t, 1) in group_accuracy:
            per_class_bias[t] = abs(group_accuracy[(t, 0)] - group_accuracy[(t, 1)])
        else:
            undefined_classes.append(t)

    bacc = 100.0 * float(np.mean(list(group_accuracy.values()))) if group_accuracy else None
    return BiasReport(
        num_classes=num_classes,
        per_class_bias=per_class_bias,
        overall_bias=sum(per_class_bias.values()),
        bacc=bacc,
        group_accuracy=group_accuracy,
        n_per_cell=n_per_cell,
        correct_per_cell=correct_per_cell,
        group_confusion=group_confusion,
        undefined_classes=undefined_classes,
        excluded_cells=excluded_cells,
    )


@torch.no_grad()
def predict_targets(model, dataset, batch_size=256):
    device = next(model.parameters()).device
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False)
    predictions = []
    with eval_mode(model):
        for x, _, _, _ in loader:
            predictions.append(forward_target(model, x.to(device)).argmax(dim=1).cpu())
    if not predictions:
        return torch.zeros(0, dtype=torch.long)
    return torch.cat(predictions)


def evaluate(model, test, batch_size=256):
    """Score the target head of ``model`` on ``test`` by bias group."""
    predictions = predict_targets(model, test, batch_size)
    return bias_report_from_predictions(
        test.targets.numpy(), test.biases.numpy(), predictions.numpy(), test.num_classes
    )


@dataclass
class RatioReport:
    table: pd.DataFrame
    rank_correlation: Optional[float]
    rank_pvalue: Optional[float]
    sign_test: Dict[str, Optional[float]]


def _paired_sign_test(table):
    """One-sided sign test: is a class more biased when its training ratio is more skewed?

    Each (class, ratio) point is paired with the same class at its least
    imbalanced ratio; ties and self-pairs are dropped.
    """
    wins, trials = 0, 0
    for _, rows in table.groupby("t"):
        reference = rows.loc[rows["imbalance"].idxmin()]
        for _, row in rows.iterrows():
            if row["imbalance"] <= reference["imbalance"] or row["bias"] == reference["bias"]:
                continue
            trials += 1
            wins += int(row["bias"] > reference["bias"])
    if trials == 0:
        return {"wins": 0, "trials": 0, "pvalue": None}
    pvalue = stats.binomtest(wins, trials, 0.5, alternative="greater").pvalue
    return {"wins": wins, "trials": trials, "pvalue": float(pvalue)}


def bias_vs_ratio_report(runs):
    """Scatter table of (t, bias_ratio(t), bias(theta, t)) over runs, with its trend statistics.

    ``runs`` holds (training dataset or GroupStats, BiasReport) pairs.
    """
    rows = []
    for run_index, (train, report) in enumerate(runs):
        ratios = train.bias_ratio
        for t in range(report.num_classes):
            if t not in ratios or t not in report.per_class_bias:
                continue
            rows.append(
                {
                    "run": run_index,
                    "t": t,
                    "bias_ratio": ratios[t],
                    "imbalance": abs(ratios[t] - 0.5),
                    "bias": report.per_class_bias[t],
                }
            )
    table = pd.DataFrame(rows, columns=["run", "t", "bias_ratio", "imbalance", "bias"])

    correlation, pvalue = None, None
    if len(table) > 1 and table["imbalance"].nunique() > 1 and table["bias"].nunique() > 1:
        result = stats.spearmanr(table["imbalance"], table["bias"])
        correlation, pvalue = float(result[0]), float(result[1])
    return RatioReport(
        table=table,
        rank_correlation=correlation,
        rank_pvalue=pvalue,
        sign_test=_paired_sign_test(table) if len(table) else {"wins": 0, "trials": 0, "pvalue": None},
    )
