from dataclasses import dataclass

import torch
import torch.optim as optim
from torch.utils.data import DataLoader

from aeda.models.composite import eval_mode, forward_bias, loss_bias
from aeda.utils.errors import ConfigError, StepOrderViolation
from aeda.utils.utils import make_generator


PROBE_UNTOUCHED = ("extractor", "target_head", "bias_head")


@dataclass
class ProbeConfig:
    enabled: bool = True
    probe_epochs: int = 3
    cadence: int = 1
    batch_size: int = 128
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.probe_epochs < 1:
            raise ConfigError("probe_epochs must be >= 1")
        if self.cadence < 1:
            raise ConfigError("probe cadence must be >= 1")

    @classmethod
    def from_conf(cls, probe_conf, seed=0):
        fields = {key: probe_conf[key] for key in cls.__dataclass_fields__ if key in probe_conf}
        fields.setdefault("seed", seed)
        return cls(**fields)

    def due(self, epoch):
        return self.enabled and epoch % self.cadence == 0


@torch.no_grad()
def _frozen_features(model, dataset, batch_size):
    device = next(model.parameters()).device
    features, labels = [], []
    for x, _, b, _ in DataLoader(dataset, batch_size=batch_size, shuffle=False):
        features.append(model.features(x.to(device)))
        labels.append(b.to(device))
    return torch.cat(features), torch.cat(labels)


def transferability_probe(model, adversarial, test, probe_config, epoch=0):
    """Accuracy r^(m) (percent) of {f; h_b_generalize} on ``test`` with true bias labels.

    The probe head is reset and trained on the features of ``adversarial``
    with its attacked labels while f stays frozen. Returns None when there
    are no adversarial examples.
    """
    if adversarial is None or len(adversarial) == 0:
        return None

    before = {name: model.component_hash(name) for name in PROBE_UNTOUCHED}
    generator = make_generator(probe_config.seed * 100003 + epoch)
    with eval_mode(model), model.frozen("extractor", "target_head", "bias_head"):
        features, labels = _frozen_features(model, adversarial, probe_config.batch_size)
        model.probe_head.reset_parameters_with(generator)
        optimizer = optim.SGD(
            model.probe_head.parameters(), lr=probe_config.lr, momentum=probe_config.momentum
        )
        for _ in range(probe_config.probe_epochs):
            order = torch.randperm(len(labels), generator=generator).to(labels.device)
            for start in range(0, len(order), probe_config.batch_size):
                index = order[start:start + probe_config.batch_size]
                loss = loss_bias(model.probe_head(features[index]), labels[index])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()

        correct, total = 0, 0
        device = next(model.parameters()).device
        with torch.no_grad():
            for x, _, b, _ in DataLoader(test, batch_size=probe_config.batch_size, shuffle=False):
                predictions = forward_bias(model, x.to(device), head="probe").argmax(dim=1)
                correct += int((predictions.cpu() == b).sum())
                total += len(b)

    changed = [name for name in PROBE_UNTOUCHED if model.component_hash(name) != before[name]]
    if changed:
        raise StepOrderViolation("transferability probe modified {}".format(changed))
    if total == 0:
        return None
    return 100.0 * correct / total
