import os
from dataclasses import dataclass, field
from typing import List, Optional

import torch
from omegaconf import OmegaConf

from aeda.attacks.ifgsm import AttackConfig
from aeda.datasets import build_datasets, group_stats
from aeda.models.composite import CompositeClassifier
from aeda.tasks.fairness import BiasReport, evaluate
from aeda.tasks.reporting import emit_plot_data
from aeda.tasks.transferability import ProbeConfig
from aeda.trainers import INAPPLICABLE, TrainConfig, build_trainer
from aeda.utils.errors import ExperimentStageError, MethodInapplicable
from aeda.utils.logger import Logger
from aeda.utils.utils import (
    config_hash,
    dataset_hash,
    file_sha256,
    fix_seed,
    state_sha256,
)


VOLATILE_FILES = ("run.log", "timing.tsv", "manifest.json")
EXIT_CODES = {"converged": 0, "epoch-limit": 0, "aborted-divergence": 2, "inapplicable": 3}


def artifact_hash(path):
    """Content hash of a run artifact; tensors are hashed by value, not by file bytes."""
    if path.endswith(".pth.tar"):
        checkpoint = torch.load(path, map_location="cpu")
        return state_sha256(checkpoint["state_dict"])
    if path.endswith(".pt"):
        return state_sha256({"tensor": torch.load(path, map_location="cpu")})
    return file_sha256(path)


@dataclass
class ExperimentResult:
    run_dir: str
    status: str
    records: List = field(default_factory=list)
    report: Optional[BiasReport] = None
    journal: List = field(default_factory=list)

    @property
    def exit_code(self):
        return EXIT_CODES[self.status]


class Experiment:
    """One method on one dataset build, written to a single run directory."""

    def __init__(self, config, logger=None):
        self.config = config
        self.logger = logger or Logger(config)
        self.config_hash = config_hash(config)
        self.dataset_hash = dataset_hash(config)
        self.output = config.get("output", OmegaConf.create({}))
        self.trainer = None

    def stamp(self, content):
        content = dict(content)
        content["config_hash"] = self.config_hash
        content["dataset_hash"] = self.dataset_hash
        return content

    def run_stage(self, name, fn, *args):
        self.logger.write("Stage {}".format(name))
        try:
            return fn(*args)
        except MethodInapplicable:
            raise
        except Exception as err:
            self.logger.save_report(
                "failure.json", self.stamp({"stage": name, "error": repr(err)})
            )
            self.write_manifest()
            raise ExperimentStageError(name, err) from err

    def build_dataset(self):
        train, test = build_datasets(self.config.dataset_config, self.logger)
        if self.output.get("save_datasets", True):
            train.save(self.logger.path("data"), "train")
            test.save(self.logger.path("data"), "test")
        self.logger.save_report(
            "train_stats.json",
            self.stamp(
                {
                    "train": group_stats(train).to_dict(),
                    "test": group_stats(test).to_dict(),
                    "metadata": train.metadata,
                    "train_manifest_hash": train.manifest_hash(),
                    "test_manifest_hash": test.manifest_hash(),
                }
            ),
        )
        return train, test

    def build_model(self):
        fix_seed(self.config.training.seed)
        return CompositeClassifier(self.config.model_config)

    def train(self, train, test, model):
        train_config = TrainConfig.from_conf(self.config.training)
        attack_config = AttackConfig.from_conf(self.config.attack)
        probe_config = ProbeConfig.from_conf(self.config.probe, seed=train_config.seed)
        self.trainer = build_trainer(
            train,
            test,
            model,
            train_config,
            attack_config,
            logger=self.logger,
            probe_config=probe_config,
            attack_log=self.output.get("attack_log", "all"),
        )
        self.logger.write("# of trainable parameters: {}".format(self.trainer.count_parameters()))
        self.trainer.train()
        self.logger.save_report("journal.json", self.stamp({"steps": self.trainer.journal}))
        adversarial = getattr(self.trainer, "adversarial", None)
        if adversarial is not None and len(adversarial) and self.output.get("save_datasets", True):
            adversarial.save(self.logger.path("data"), "adversarial")
        return self.trainer

    def final_report(self, test, model):
        reports = self.trainer.reports
        report = reports[-1] if reports else evaluate(model, test, self.trainer.config.batch_size)
        for earlier in reports:
            report.transferability.update(earlier.transferability)
        content = report.to_dict()
        content["display"] = report.display()
        self.logger.save_report("bias_report.json", self.stamp(content))
        return report

    def write_status(self, status, epochs_completed, detail=None):
        content = {
            "status": status,
            "method": self.config.training.method,
            "seed": self.config.training.seed,
            "epochs_completed": epochs_completed,
        }
        if detail:
            content.update(detail)
        self.logger.save_report("status.json", self.stamp(content))

    def emit_plots(self):
        kinds = self.output.get("plots", []) or []
        for kind in kinds:
            emit_plot_data([self.logger.experiment_dir], kind, self.logger.path("plots"))

    def write_manifest(self):
        files = []
        for root, _, names in os.walk(self.logger.experiment_dir):
            for name in names:
                path = os.path.join(root, name)
                rel = os.path.relpath(path, self.logger.experiment_dir)
                if name in VOLATILE_FILES:
                    continue
                digest = self.config_hash if rel == "config.yaml" else artifact_hash(path)
                files.append({"path": rel, "sha256": digest})
        files.sort(key=lambda entry: entry["path"])
        self.logger.save_report(
            "manifest.json", self.stamp({"files": files, "volatile": list(VOLATILE_FILES)})
        )

    def run(self):
        self.logger.save_config()
        train, test = self.run_stage("dataset", self.build_dataset)
        model = self.run_stage("model", self.build_model)
        try:
            self.run_stage("train", self.train, train, test, model)
        except MethodInapplicable as err:
            self.logger.warn(str(err))
            self.write_status(
                INAPPLICABLE,
                0,
                {"empty_cells": ["{},{}".format(t, b) for t, b in err.empty_cells]},
            )
            self.write_manifest()
            return ExperimentResult(self.logger.experiment_dir, INAPPLICABLE)

        report = self.run_stage("evaluate", self.final_report, test, model)
        status = self.trainer.status
        self.write_status(status, len(self.trainer.records))
        self.run_stage("report", self.emit_plots)
        self.write_manifest()
        self.logger.write("Run finished with status {}: {}".format(status, report.display()))
        return ExperimentResult(
            self.logger.experiment_dir,
            status,
            self.trainer.records,
            report,
            self.trainer.journal,
        )


def run_experiment(config, logger=None):
    return Experiment(config, logger).run()
