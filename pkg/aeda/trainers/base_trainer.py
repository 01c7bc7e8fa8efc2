import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Optional

import torch
import torch.optim as optim
from omegaconf import OmegaConf
from torch.optim.lr_scheduler import MultiStepLR
from torch.utils.data import DataLoader

from aeda.models.composite import COMPONENTS, forward_target, loss_target
from aeda.tasks.fairness import evaluate
from aeda.tasks.transferability import ProbeConfig, transferability_probe
from aeda.utils.errors import ConfigError, StepOrderViolation, TrainingDiverged
from aeda.utils.logger import Logger
from aeda.utils.utils import make_generator


METHODS = (
    "original",
    "downsampling",
    "reweighting",
    "adv_debias",
    "aeda_pre",
    "aeda_once",
    "aeda_online",
    "aeda_robust",
)
ROBUST_LABEL_MODES = ("original", "attacked")
AEDA_PRE_INITS = ("scratch", "finetune")

CONVERGED = "converged"
EPOCH_LIMIT = "epoch-limit"
ABORTED_DIVERGENCE = "aborted-divergence"
INAPPLICABLE = "inapplicable"

# offsets that give each data stream its own generator within an epoch
LOADER_STREAMS = {"target": 0, "bias": 1, "adversarial": 2, "classifier": 3}


@dataclass
class TrainConfig:
    method: str = "original"
    epochs: int = 60
    batch_size: int = 128
    optimizer: str = "SGD"
    optimizer_args: Dict = field(default_factory=lambda: {"lr": 0.01, "momentum": 0.9})
    lr_milestones: tuple = (2 / 3,)
    lr_gamma: float = 0.1
    k: int = 2
    early_stop: bool = True
    plateau_window: int = 5
    plateau_threshold: float = 1e-3
    min_epochs: int = 20
    seed: int = 0
    online_cutoff_epoch: Optional[int] = None
    reversal_strength: float = 1.0
    robust_label_mode: str = "original"
    aeda_pre_init: str = "scratch"
    bias_classifier_epochs: Optional[int] = None
    device: str = "cpu"
    num_workers: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError("method must be one of {}, got {}".format(METHODS, self.method))
        # 0 epochs is a no-op run
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.plateau_window < 1:
            raise ConfigError("plateau window must be >= 1")
        if self.robust_label_mode not in ROBUST_LABEL_MODES:
            raise ConfigError("robust_label_mode must be one of {}".format(ROBUST_LABEL_MODES))
        if self.aeda_pre_init not in AEDA_PRE_INITS:
            raise ConfigError("aeda_pre_init must be one of {}".format(AEDA_PRE_INITS))
        if self.reversal_strength < 0:
            raise ConfigError("reversal_strength must be non-negative")
        if getattr(optim, self.optimizer, None) is None:
            raise ConfigError("{} optimizer is not supported.".format(self.optimizer))

    @classmethod
    def from_conf(cls, training_conf):
        early_stop = training_conf.early_stop
        return cls(
            method=training_conf.method,
            epochs=training_conf.epochs,
            batch_size=training_conf.dataloader.batch_size,
            num_workers=training_conf.dataloader.get("num_workers", 0),
            optimizer=training_conf.optimizer.name,
            optimizer_args=OmegaConf.to_container(training_conf.optimizer.args, resolve=True),
            lr_milestones=tuple(training_conf.scheduler.milestones),
            lr_gamma=training_conf.scheduler.gamma,
            k=training_conf.k,
            early_stop=early_stop.enabled,
            plateau_window=early_stop.window,
            plateau_threshold=early_stop.threshold,
            min_epochs=early_stop.min_epochs,
            seed=training_conf.seed,
            online_cutoff_epoch=training_conf.online_cutoff_epoch,
            reversal_strength=training_conf.reversal_strength,
            robust_label_mode=training_conf.robust_label_mode,
            aeda_pre_init=training_conf.aeda_pre_init,
            bias_classifier_epochs=training_conf.bias_classifier_epochs,
            device=training_conf.device,
        )


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    bacc: Optional[float] = None
    overall_bias: Optional[float] = None
    transferability: Optional[float] = None
    attack_success_rate: Optional[float] = None
    target_preservation: Optional[float] = None
    learning_rate: Optional[float] = None
    wall_time: float = 0.0


@dataclass
class EpochOutcome:
    """What one epoch of a method produced, before evaluation."""

    train_loss: float
    attack_success_rate: Optional[float] = None
    target_preservation: Optional[float] = None
    probe_set: Optional[object] = None


def has_converged(losses, window, threshold, min_epochs):
    """Plateau rule: relative improvement of the train loss over ``window`` epochs below ``threshold``."""
    if len(losses) < max(min_epochs, window + 1):
        return False
    reference = losses[-window - 1]
    if reference == 0:
        return True
    return (reference - losses[-1]) / abs(reference) < threshold


class BaseTrainer(ABC):
    """Epoch loop shared by all methods: train, evaluate on the fair test split, probe, log.

    Subclasses implement ``train_epoch``; every source of randomness inside
    the loop comes from generators seeded by (seed, epoch, stream).
    """

    method = None

    def __init__(
        self,
        train_set,
        test_set,
        model,
        config,
        logger=None,
        probe_config=None,
        attack_log="all",
    ):
        self.train_set = train_set
        self.test_set = test_set
        self.model = model
        self.config = config
        self.logger = logger or Logger.console()
        self.probe_config = probe_config or ProbeConfig(enabled=False)
        self.attack_log = attack_log
        self.device = torch.device(config.device)

        self.records = []
        self.journal = []
        self.reports = []
        self.status = None
        self.schedulers = []
        self.model.to(self.device)

        self.load()

    def load(self):
        self.load_dataset()
        self.build_optimizer()

    def count_parameters(self):
        """ Count trainable parameters in model. """
        return sum(p.numel() for p in self.model.parameters() if p.requires_grad)

    def load_dataset(self):
        self.logger.write(
            "Number of training samples: {}".format(len(self.train_set))
        )

    def build_optimizer(self):
        self.optimizer = self.make_optimizer(
            self.model.parameters_of("extractor", "target_head")
        )

    def make_optimizer(self, params):
        optimizer = getattr(optim, self.config.optimizer)(params, **self.config.optimizer_args)
        milestones = sorted({max(1, int(round(f * self.config.epochs))) for f in self.config.lr_milestones})
        self.schedulers.append(
            MultiStepLR(optimizer, milestones=milestones, gamma=self.config.lr_gamma)
        )
        return optimizer

    def generator(self, stream, epoch):
        return make_generator(self.config.seed * 100003 + epoch * 101 + LOADER_STREAMS[stream])

    def loader(self, dataset, stream, epoch, shuffle=True):
        return DataLoader(
            dataset,
            batch_size=self.config.batch_size,
            shuffle=shuffle,
            generator=self.generator(stream, epoch),
            num_workers=self.config.num_workers,
        )

    def to_device(self, batch):
        x, t, b, idx = batch
        return x.to(self.device), t.to(self.device), b.to(self.device), idx

    def training_step(self, x, t, b, idx):
        """One optimisation step on the target task; returns the reported loss."""
        loss = loss_target(forward_target(self.model, x), t)
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return loss

    def run_target_epoch(self, dataset, epoch):
        self.model.train()
        running_loss = 0.0
        n_batches = 0
        for batch in self.loader(dataset, "target", epoch):
            loss = self.training_step(*self.to_device(batch))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, value)
            running_loss += value
            n_batches += 1
        if n_batches == 0:
            return 0.0
        return running_loss / n_batches

    def check_step(self, epoch, step, before, allowed):
        """Journal which components ``step`` mutated; anything outside ``allowed`` is a violation."""
        after = self.model.component_hashes()
        changed = [name for name in COMPONENTS if before[name] != after[name]]
        self.journal.append({"epoch": epoch, "step": step, "changed": changed})
        illegal = sorted(set(changed) - set(allowed))
        if illegal:
            raise StepOrderViolation(
                "epoch {} step '{}' modified {}".format(epoch, step, illegal)
            )
        return after

    @property
    def learning_rate(self):
        return self.schedulers[0].get_last_lr()[0] if self.schedulers else None

    def prepare(self):
        """Work done once before the first epoch."""

    @abstractmethod
    def train_epoch(self, epoch):
        """Run one epoch of the method and return an EpochOutcome."""

    def probe(self, epoch, probe_set):
        if not self.probe_config.due(epoch):
            return None
        return transferability_probe(self.model, probe_set, self.test_set, self.probe_config, epoch)

    def save_checkpoint(self, epoch, report, is_best):
        checkpoint = {
            "epoch": epoch,
            "method": self.method,
            "state_dict": self.model.state_dict(),
            "model_config": OmegaConf.to_container(self.model.config, resolve=True)
            if OmegaConf.is_config(self.model.config)
            else dict(self.model.config),
            "bacc": report.bacc,
        }
        self.logger.save_checkpoint(state=checkpoint, is_best=is_best)

    def train(self):
        self.logger.write(
            "Started training with method {} for {} epochs".format(self.method, self.config.epochs)
        )
        self.status = EPOCH_LIMIT
        try:
            self.prepare()
        except TrainingDiverged as err:
            self.logger.warn(str(err))
            self.status = ABORTED_DIVERGENCE
            return self.model, self.records
        losses = []
        best_bacc = None
        for epoch in range(self.config.epochs):
            epoch_start_time = time.time()
            learning_rate = self.learning_rate
            try:
                outcome = self.train_epoch(epoch)
            except TrainingDiverged as err:
                self.logger.warn(str(err))
                self.status = ABORTED_DIVERGENCE
                break
            for scheduler in self.schedulers:
                scheduler.step()

            report = evaluate(self.model, self.test_set, self.config.batch_size)
            r = self.probe(epoch, outcome.probe_set)
            if r is not None:
                report.transferability[epoch] = r
            self.reports.append(report)

            record = EpochRecord(
                epoch=epoch,
                train_loss=outcome.train_loss,
                bacc=report.bacc,
                overall_bias=report.overall_bias,
                transferability=r,
                attack_success_rate=outcome.attack_success_rate,
                target_preservation=outcome.target_preservation,
                learning_rate=learning_rate,
                wall_time=time.time() - epoch_start_time,
            )
            self.records.append(record)
            self.logger.update_training_log(record)

            is_best = report.bacc is not None and (best_bacc is None or report.bacc > best_bacc)
            if is_best:
                best_bacc = report.bacc
            self.save_checkpoint(epoch, report, is_best)

            losses.append(outcome.train_loss)
            if self.config.early_stop and has_converged(
                losses,
                self.config.plateau_window,
                self.config.plateau_threshold,
                self.config.min_epochs,
            ):
                self.logger.write("Target loss converged after epoch {}".format(epoch))
                self.status = CONVERGED
                break
        return self.model, self.records
