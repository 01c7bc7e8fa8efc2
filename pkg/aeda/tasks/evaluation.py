import os

import torch
from omegaconf import OmegaConf

from aeda.datasets import GroupedDataset, build_datasets
from aeda.models.composite import CompositeClassifier
from aeda.tasks.fairness import evaluate
from aeda.tasks.transferability import ProbeConfig, transferability_probe


class Evaluation:
    """Reload a finished run (config, checkpoint, dataset manifests) and score it again."""

    def __init__(self, run_dir, device="cpu", checkpoint="checkpoint.pth.tar"):
        self.run_dir = run_dir
        self.config = OmegaConf.load(os.path.join(run_dir, "config.yaml"))
        self.device = torch.device(device)
        self.path_to_model = os.path.join(run_dir, checkpoint)
        print("path to model", self.path_to_model)

        self.load_dataset()
        self.build_model()

    def load_dataset(self):
        data_dir = os.path.join(self.run_dir, "data")
        if os.path.exists(os.path.join(data_dir, "test_manifest.json")):
            self.test_set = GroupedDataset.load(data_dir, "test")
        else:
            _, self.test_set = build_datasets(self.config.dataset_config)
        self.adversarial = None
        if os.path.exists(os.path.join(data_dir, "adversarial_manifest.json")):
            self.adversarial = GroupedDataset.load(data_dir, "adversarial")

    def build_model(self):
        self.checkpoint = torch.load(self.path_to_model, map_location=self.device)
        self.model = CompositeClassifier(OmegaConf.create(self.checkpoint["model_config"]))
        self.model.load_state_dict(self.checkpoint["state_dict"])
        self.model.to(self.device)
        self.model.eval()

    def evaluate(self):
        report = evaluate(self.model, self.test_set)
        print(report.display())
        return report

    def probe(self, probe_config=None):
        """r of the saved extractor on the run's final adversarial set; None without one."""
        if probe_config is None:
            probe_config = ProbeConfig.from_conf(self.config.probe, seed=self.config.training.seed)
        epoch = self.checkpoint["epoch"]
        return transferability_probe(self.model, self.adversarial, self.test_set, probe_config, epoch)
