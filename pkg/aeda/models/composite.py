from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional

import torch
from torch import nn

from aeda.modules.backbones import build_extractor
from aeda.modules.heads import LinearHead
from aeda.utils.utils import state_sha256


COMPONENTS = ("extractor", "target_head", "bias_head", "probe_head")
BIAS_HEADS = {"main": "bias_head", "probe": "probe_head"}


@contextmanager
def eval_mode(*modules):
    """Put modules in eval mode for the block, then restore their previous mode."""
    modules = [m for m in modules if m is not None]
    previous = [m.training for m in modules]
    for m in modules:
        m.eval()
    try:
        yield
    finally:
        for m, flag in zip(modules, previous):
            m.train(flag)


class CompositeClassifier(nn.Module):
    """Shared extractor f with target head h_t, bias head h_b and probe head h_b_generalize.

    All heads consume the same D-dimensional features. Parameters are
    partitioned by component (see ``COMPONENTS``).
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.num_classes = config.num_classes
        self.in_channels = config.in_channels
        feature_dim = config.feature_dim

        self.extractor = build_extractor(config)
        self.target_head = LinearHead(feature_dim, self.num_classes)
        self.bias_head = LinearHead(feature_dim, 2)
        self.probe_head = LinearHead(feature_dim, 2)

    def check_batch(self, x):
        if x.dim() != 4 or x.size(1) != self.in_channels:
            raise ValueError(
                "expected a N x {} x H x W batch, got {}".format(self.in_channels, tuple(x.shape))
            )

    def features(self, x):
        self.check_batch(x)
        return self.extractor(x)

    def forward(self, x):
        return self.target_head(self.features(x))

    def component(self, name):
        if name not in COMPONENTS:
            raise ValueError("{} is not a component of the classifier".format(name))
        return getattr(self, name)

    def parameters_of(self, *names):
        return [p for name in names for p in self.component(name).parameters()]

    def component_hash(self, name):
        return state_sha256(self.component(name))

    def component_hashes(self):
        return {name: self.component_hash(name) for name in COMPONENTS}

    @contextmanager
    def frozen(self, *names):
        """Disable gradients for the named components for the duration of the block."""
        params = self.parameters_of(*names)
        previous = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad_(False)
        try:
            yield self
        finally:
            for p, flag in zip(params, previous):
                p.requires_grad_(flag)

    def bias_classifier(self, head="main"):
        return CoupledBiasClassifier(self, head)

    @classmethod
    def config_path(cls):
        return "configs/models/composite.yaml"


class CoupledBiasClassifier(nn.Module):
    """{f; h_b} view of a composite model, used as an attack target."""

    def __init__(self, model, head="main"):
        super().__init__()
        self.model = model
        self.head = head

    def forward(self, x):
        return forward_bias(self.model, x, self.head)


class StandaloneBiasClassifier(nn.Module):
    """Self-contained image -> {0, 1} classifier with its own extractor and head."""

    def __init__(self, config):
        super().__init__()
        self.in_channels = config.in_channels
        self.extractor = build_extractor(config)
        self.head = LinearHead(config.feature_dim, 2)

    def forward(self, x):
        if x.dim() != 4 or x.size(1) != self.in_channels:
            raise ValueError("expected a N x {} x H x W batch".format(self.in_channels))
        return self.head(self.extractor(x))


def forward_target(model, batch):
    return model.target_head(model.features(batch))


def forward_bias(model, batch, head="main"):
    if head not in BIAS_HEADS:
        raise ValueError("head must be one of {}".format(sorted(BIAS_HEADS)))
    return model.component(BIAS_HEADS[head])(model.features(batch))


def _check_labels(logits, labels):
    if labels.dim() != 1 or labels.size(0) != logits.size(0):
        raise ValueError("labels must be a vector with one entry per logit row")
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.size(1)):
        raise ValueError("labels outside 0..{}".format(logits.size(1) - 1))


def loss_target(logits, t, weights=None, reduction="mean"):
    """Cross-entropy of target logits; ``weights`` scales each example's loss."""
    _check_labels(logits, t)
    losses = nn.functional.cross_entropy(logits, t, reduction="none")
    if weights is not None:
        losses = losses * weights
    if reduction == "none":
        return losses
    if reduction == "sum":
        return losses.sum()
    return losses.mean()


def loss_bias(logits, b, reduction="mean"):
    _check_labels(logits, b)
    return nn.functional.cross_entropy(logits, b, reduction=reduction)


@dataclass
class LossSpec:
    """Which loss ``gradient_wrt_input`` differentiates.

    ``bias_weight`` * L_bias(b) + ``target_weight`` * L_target(t), summed over
    the batch so each example's input gradient is independent of batch size.
    A zero weight drops its term entirely.
    """

    bias_labels: Optional[torch.Tensor] = None
    target_labels: Optional[torch.Tensor] = None
    bias_weight: float = 1.0
    target_weight: float = 0.0
    head: str = "main"
    scale: float = 1.0

    def per_example(self, model, x, bias_classifier=None):
        if self.bias_weight == 0 and self.target_weight == 0:
            raise ValueError("loss spec has no active term")
        total = None
        if self.bias_weight != 0:
            if self.bias_labels is None:
                raise ValueError("bias term requires bias labels")
            logits = bias_classifier(x) if bias_classifier is not None else forward_bias(model, x, self.head)
            total = self.bias_weight * loss_bias(logits, self.bias_labels, reduction="none")
        if self.target_weight != 0:
            if self.target_labels is None:
                raise ValueError("target term requires target labels")
            term = self.target_weight * loss_target(forward_target(model, x), self.target_labels, reduction="none")
            total = term if total is None else total + term
        return self.scale * total

    def __call__(self, model, x, bias_classifier=None):
        return self.per_example(model, x, bias_classifier).sum()


def gradient_wrt_input(model, batch, loss_spec, bias_classifier=None):
    """d loss / d input for ``loss_spec``; parameters receive no gradient."""
    x = batch.detach().clone().requires_grad_(True)
    loss = loss_spec(model, x, bias_classifier)
    if not loss.requires_grad:
        raise ValueError("loss does not depend differentiably on the input")
    (grad,) = torch.autograd.grad(loss, x)
    return grad
