import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from aeda.datasets.grouped import GroupStats
from aeda.tasks.fairness import BiasReport, bias_vs_ratio_report
from aeda.utils.errors import ConfigError
from aeda.utils.logger import read_records
from aeda.utils.utils import load_json, save_json


PLOT_KINDS = ("bias_vs_ratio", "transferability_curves", "confusion_grids", "bias_curves")
TABLE_ORDER = (
    "original",
    "downsampling",
    "reweighting",
    "adv_debias",
    "aeda_pre",
    "aeda_once",
    "aeda_online",
    "aeda_robust",
)


def run_name(run_dir):
    return os.path.basename(os.path.normpath(run_dir))


def load_status(run_dir):
    path = os.path.join(run_dir, "status.json")
    if not os.path.exists(path):
        raise ConfigError("{} has no status.json; is it a finished run?".format(run_dir))
    return load_json(path)


def _final_metrics(run_dir):
    if not os.path.exists(os.path.join(run_dir, "epoch_records.tsv")):
        return np.nan, np.nan
    records = read_records(run_dir)
    if records.empty:
        return np.nan, np.nan
    final = records.iloc[-1]
    return final["bacc"], final["overall_bias"]


@dataclass
class Comparison:
    table: pd.DataFrame
    runs: pd.DataFrame
    orderings: Dict[str, Optional[bool]] = field(default_factory=dict)


def _ordering_checks(table):
    means = table.set_index("method")

    def value(method, column):
        if method not in means.index or pd.isna(means.loc[method, column]):
            return None
        return means.loc[method, column]

    def chain(column, methods, descending=True):
        values = [value(m, column) for m in methods]
        if any(v is None for v in values):
            return None
        pairs = zip(values, values[1:])
        return all(a > b for a, b in pairs) if descending else all(a < b for a, b in pairs)

    robust, original = value("aeda_robust", "bacc"), value("original", "bacc")
    return {
        "bacc: aeda_robust > aeda_online > aeda_pre": chain(
            "bacc", ["aeda_robust", "aeda_online", "aeda_pre"]
        ),
        "bacc: aeda_robust - original >= 15": None
        if robust is None or original is None
        else bool(robust - original >= 15),
        "bias: aeda_robust < aeda_online < original": chain(
            "overall_bias", ["aeda_robust", "aeda_online", "original"], descending=False
        ),
    }


def compare_runs(run_dirs, output_path=None):
    """Method x {bACC, overall bias} table over runs of one dataset build, averaged over seeds.

    Inapplicable or missing metrics stay NaN. Refuses runs whose dataset hashes differ.
    """
    if not run_dirs:
        raise ConfigError("compare_runs needs at least one run directory")
    rows = []
    for run_dir in run_dirs:
        status = load_status(run_dir)
        bacc, bias = _final_metrics(run_dir)
        rows.append(
            {
                "run": run_name(run_dir),
                "method": status["method"],
                "seed": status["seed"],
                "status": status["status"],
                "dataset_hash": status["dataset_hash"],
                "bacc": bacc,
                "overall_bias": bias,
            }
        )
    runs = pd.DataFrame(rows)
    if runs["dataset_hash"].nunique() > 1:
        raise ConfigError(
            "runs were built from different datasets: {}".format(sorted(runs["dataset_hash"].unique()))
        )

    table = (
        runs.groupby("method", sort=False)
        .agg(n_runs=("bacc", "count"), bacc=("bacc", "mean"), overall_bias=("overall_bias", "mean"))
        .reset_index()
    )
    table["bias_display"] = 100.0 * table["overall_bias"]
    order = {method: i for i, method in enumerate(TABLE_ORDER)}
    table = table.sort_values("method", key=lambda s: s.map(order)).reset_index(drop=True)

    comparison = Comparison(table=table, runs=runs, orderings=_ordering_checks(table))
    if output_path is not None:
        table.to_csv(output_path, sep="\t", index=False, na_rep="NA")
        save_json(
            os.path.splitext(output_path)[0] + "_orderings.json",
            {"orderings": comparison.orderings, "dataset_hash": runs["dataset_hash"].iloc[0]},
        )
    return comparison


@dataclass
class PlotData:
    files: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)


def _write_table(frame, path, data):
    frame.to_csv(path, sep="\t", index=False, na_rep="NA")
    data.files.append(path)


def _method_of(run_dir):
    return load_status(run_dir)["method"]


def _curves(run_dirs, columns):
    frames = []
    for run_dir in run_dirs:
        records = read_records(run_dir)
        frame = records[["epoch"] + columns].copy()
        frame.insert(0, "method", _method_of(run_dir))
        frame.insert(0, "run", run_name(run_dir))
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def emit_plot_data(run_dirs, kind, out_dir):
    """Write tab-separated plot data of ``kind`` for ``run_dirs`` into ``out_dir``."""
    if kind not in PLOT_KINDS:
        raise ConfigError("plot kind must be one of {}".format(PLOT_KINDS))
    if not run_dirs:
        raise ConfigError("emit_plot_data needs at least one run directory")
    os.makedirs(out_dir, exist_ok=True)
    data = PlotData()

    if kind == "bias_curves":
        _write_table(
            _curves(run_dirs, ["bacc", "overall_bias"]), os.path.join(out_dir, "bias_curves.tsv"), data
        )

    elif kind == "transferability_curves":
        frame = _curves(run_dirs, ["transferability"]).dropna(subset=["transferability"])
        if frame.empty:
            data.notes.append("no transferability probe records in the given runs")
        _write_table(frame, os.path.join(out_dir, "transferability_curves.tsv"), data)

    elif kind == "confusion_grids":
        for run_dir in run_dirs:
            report = BiasReport.from_dict(load_json(os.path.join(run_dir, "bias_report.json")))
            for b, matrix in sorted(report.group_confusion.items()):
                frame = pd.DataFrame(
                    matrix, columns=["pred_{}".format(c) for c in range(report.num_classes)]
                )
                frame.insert(0, "t", range(report.num_classes))
                name = "confusion_{}_b{}.tsv".format(run_name(run_dir), b)
                _write_table(frame, os.path.join(out_dir, name), data)

    else:
        runs = []
        for run_dir in run_dirs:
            stats = GroupStats.from_dict(load_json(os.path.join(run_dir, "train_stats.json"))["train"])
            report = BiasReport.from_dict(load_json(os.path.join(run_dir, "bias_report.json")))
            runs.append((stats, report))
        ratio_report = bias_vs_ratio_report(runs)
        table = ratio_report.table.copy()
        table["run"] = [run_name(run_dirs[i]) for i in table["run"]]
        _write_table(table, os.path.join(out_dir, "bias_vs_ratio.tsv"), data)
        summary_path = os.path.join(out_dir, "bias_vs_ratio_summary.json")
        save_json(
            summary_path,
            {
                "rank_correlation": ratio_report.rank_correlation,
                "rank_pvalue": ratio_report.rank_pvalue,
                "sign_test": ratio_report.sign_test,
                "n_points": len(table),
            },
        )
        data.files.append(summary_path)

    for note in data.notes:
        with open(os.path.join(out_dir, "{}_notes.txt".format(kind)), "a") as notes_file:
            notes_file.write(note + "\n")
    return data
