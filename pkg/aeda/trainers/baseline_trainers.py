import torch

from aeda.datasets.grouped import group_stats
from aeda.models.composite import loss_bias, loss_target
from aeda.modules.heads import grad_reverse
from aeda.trainers.base_trainer import BaseTrainer, EpochOutcome
from aeda.utils.errors import MethodInapplicable
from aeda.utils.utils import make_generator


class OriginalTrainer(BaseTrainer):
    """Plain supervised training of (f, h_t) on D_ori."""

    method = "original"

    def train_epoch(self, epoch):
        return EpochOutcome(train_loss=self.run_target_epoch(self.train_set, epoch))


def _required_empty_cells(dataset):
    stats = group_stats(dataset)
    return [
        (t, b)
        for t in range(stats.num_classes)
        for b in (0, 1)
        if stats.class_total(t) > 0 and stats.counts[(t, b)] == 0
    ]


def downsample(dataset, seed=0):
    """Keep min(n(t,0), n(t,1)) examples of each cell of class t, drawn without replacement."""
    empty = _required_empty_cells(dataset)
    if empty:
        raise MethodInapplicable("downsampling", empty)
    generator = make_generator(seed)
    stats = group_stats(dataset)
    keep = []
    for t in range(dataset.num_classes):
        size = min(stats.counts[(t, 0)], stats.counts[(t, 1)])
        for b in (0, 1):
            cell = ((dataset.targets == t) & (dataset.biases == b)).nonzero(as_tuple=True)[0]
            keep.extend(cell[torch.randperm(len(cell), generator=generator)[:size]].tolist())
    return dataset.subset(sorted(keep))


def reweighting_weights(dataset):
    """(num_classes x 2) weights proportional to 1 / n(t, b), with mean 1 over non-empty cells."""
    empty = _required_empty_cells(dataset)
    if empty:
        raise MethodInapplicable("reweighting", empty)
    stats = group_stats(dataset)
    weights = torch.zeros(dataset.num_classes, 2, dtype=torch.float64)
    for (t, b), n in stats.counts.items():
        if n > 0:
            weights[t, b] = 1.0 / n
    occupied = weights > 0
    weights[occupied] = weights[occupied] / weights[occupied].mean()
    return weights.float()


class DownsamplingTrainer(BaseTrainer):
    method = "downsampling"

    def load_dataset(self):
        self.balanced_set = downsample(self.train_set, self.config.seed)
        self.logger.write(
            "Down-sampled {} training examples to {}".format(
                len(self.train_set), len(self.balanced_set)
            )
        )

    def train_epoch(self, epoch):
        return EpochOutcome(train_loss=self.run_target_epoch(self.balanced_set, epoch))


class ReweightingTrainer(BaseTrainer):
    method = "reweighting"

    def load_dataset(self):
        super().load_dataset()
        self.cell_weights = reweighting_weights(self.train_set).to(self.device)

    def training_step(self, x, t, b, idx):
        logits = self.model.target_head(self.model.features(x))
        loss = loss_target(logits, t, weights=self.cell_weights[t, b])
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        return loss

    def train_epoch(self, epoch):
        return EpochOutcome(train_loss=self.run_target_epoch(self.train_set, epoch))


class AdvDebiasTrainer(BaseTrainer):
    """Gradient reversal between f and h_b: h_b learns the bias, f learns to hide it."""

    method = "adv_debias"

    def build_optimizer(self):
        super().build_optimizer()
        self.bias_optimizer = self.make_optimizer(self.model.parameters_of("bias_head"))

    def training_step(self, x, t, b, idx):
        features = self.model.features(x)
        target_loss = loss_target(self.model.target_head(features), t)
        strength = self.config.reversal_strength
        if strength == 0:
            reversed_features = features.detach()
        else:
            reversed_features = grad_reverse(features, strength)
        bias_loss = loss_bias(self.model.bias_head(reversed_features), b)

        self.optimizer.zero_grad()
        self.bias_optimizer.zero_grad()
        (target_loss + bias_loss).backward()
        self.optimizer.step()
        self.bias_optimizer.step()
        return target_loss

    def train_epoch(self, epoch):
        return EpochOutcome(train_loss=self.run_target_epoch(self.train_set, epoch))


def _run(trainer_cls, train_set, test_set, model, config, **kwargs):
    trainer = trainer_cls(train_set, test_set, model, config, **kwargs)
    return trainer.train()


def train_original(train_set, test_set, model, config, **kwargs):
    return _run(OriginalTrainer, train_set, test_set, model, config, **kwargs)


def train_downsampling(train_set, test_set, model, config, **kwargs):
    return _run(DownsamplingTrainer, train_set, test_set, model, config, **kwargs)


def train_reweighting(train_set, test_set, model, config, **kwargs):
    return _run(ReweightingTrainer, train_set, test_set, model, config, **kwargs)


def train_adv_debias(train_set, test_set, model, config, **kwargs):
    return _run(AdvDebiasTrainer, train_set, test_set, model, config, **kwargs)
