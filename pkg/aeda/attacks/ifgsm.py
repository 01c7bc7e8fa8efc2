from dataclasses import dataclass, field
from typing import List, Optional

import torch

from aeda.datasets.grouped import ADVERSARIAL, GroupedDataset, group_stats
from aeda.models.composite import LossSpec, eval_mode, forward_target
from aeda.utils.errors import ConfigError
from aeda.utils.utils import make_generator


SUCCESS_RULES = ("keep-all", "require-bias-flip")


@dataclass
class AttackConfig:
    """I-FGSM settings. ``lam`` weighs L_bias against (1 - lam) * L_target."""

    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    lam: float = 0.7
    clip_min: float = 0.0
    clip_max: float = 1.0
    success_rule: str = "keep-all"
    batch_size: int = 256

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("attack steps must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1], got {}".format(self.lam))
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        # epsilon = 0 is the identity attack; otherwise 0 < alpha <= epsilon
        if self.epsilon > 0 and not 0 < self.alpha <= self.epsilon:
            raise ConfigError("alpha must satisfy 0 < alpha <= epsilon")
        if self.clip_min >= self.clip_max:
            raise ConfigError("clip_min must be below clip_max")
        if self.success_rule not in SUCCESS_RULES:
            raise ConfigError("success_rule must be one of {}".format(SUCCESS_RULES))

    @classmethod
    def from_conf(cls, attack_conf, **overrides):
        fields = {key: attack_conf[key] for key in cls.__dataclass_fields__ if key in attack_conf}
        fields.update(overrides)
        return cls(**fields)


@dataclass
class AttackResult:
    """Adversarial examples (bias label = b_attack, target label preserved) and per-example outcome.

    ``success``, ``linf`` and the target predictions cover every attacked
    example; ``adversarial`` holds only the kept ones under the success rule.
    ``loss_trace`` is (steps + 1) x N: the attacked loss at each iterate.
    """

    adversarial: GroupedDataset
    b_attack: torch.Tensor
    success: torch.Tensor
    linf: torch.Tensor
    source_ids: List[str]
    loss_trace: torch.Tensor
    target_pred_before: Optional[torch.Tensor] = None
    target_pred_after: Optional[torch.Tensor] = None
    notes: List[str] = field(default_factory=list)

    @property
    def success_rate(self):
        if len(self.success) == 0:
            return 0.0
        return self.success.float().mean().item()

    @property
    def target_preservation_rate(self):
        if self.target_pred_before is None or len(self.target_pred_before) == 0:
            return None
        return (self.target_pred_before == self.target_pred_after).float().mean().item()

    def log_records(self):
        records = []
        for i, sid in enumerate(self.source_ids):
            record = {
                "source_id": sid,
                "b_attack": int(self.b_attack[i]),
                "success": bool(self.success[i]),
                "linf": float(self.linf[i]),
            }
            if self.target_pred_before is not None:
                record["target_pred_before"] = int(self.target_pred_before[i])
                record["target_pred_after"] = int(self.target_pred_after[i])
            records.append(record)
        return records


@dataclass(frozen=True)
class AttackPlanEntry:
    source_id: str
    b_attack: int


def _device_of(module):
    return next(module.parameters()).device


def _attack_labels(b_attack, n):
    if isinstance(b_attack, int):
        labels = torch.full((n,), b_attack, dtype=torch.long)
    else:
        labels = torch.as_tensor(b_attack, dtype=torch.long)
    if labels.shape != (n,):
        raise ValueError("b_attack must be an int or one label per example")
    if n and not set(labels.unique().tolist()) <= {0, 1}:
        raise ValueError("b_attack must be 0 or 1")
    return labels


def run_ifgsm(per_example_loss, x_ori, config):
    """Signed-gradient descent on ``per_example_loss`` inside the eps L-inf ball.

    x <- clip_[clip_min, clip_max](clip_eps-ball(x - alpha * sign(grad))), ``steps`` times.
    Returns the final iterate and the (steps + 1) x N loss trace.
    """
    x_ori = x_ori.detach()
    x_adv = x_ori.clone()
    trace = []
    if config.epsilon > 0:
        for _ in range(config.steps):
            x_adv.requires_grad_(True)
            losses = per_example_loss(x_adv)
            (grad,) = torch.autograd.grad(losses.sum(), x_adv)
            trace.append(losses.detach())
            x_adv = x_adv.detach() - config.alpha * grad.sign()
            x_adv = torch.min(torch.max(x_adv, x_ori - config.epsilon), x_ori + config.epsilon)
            x_adv = x_adv.clamp(config.clip_min, config.clip_max)
    with torch.no_grad():
        trace.append(per_example_loss(x_adv).detach())
    return x_adv.detach(), torch.stack(trace)


def _attack(batch, b_attack, config, loss_spec_for, bias_classifier, target_model=None):
    device = _device_of(bias_classifier)
    labels = _attack_labels(b_attack, len(batch))

    adversarial, success, traces = [], [], []
    pred_before, pred_after = [], []
    for start in range(0, len(batch), config.batch_size):
        x = batch.pixels[start:start + config.batch_size].to(device)
        t = batch.targets[start:start + config.batch_size].to(device)
        b = labels[start:start + config.batch_size].to(device)
        loss_spec = loss_spec_for(b, t)

        x_adv, trace = run_ifgsm(
            lambda inputs: loss_spec.per_example(target_model, inputs, bias_classifier), x, config
        )
        with torch.no_grad():
            success.append((bias_classifier(x_adv).argmax(dim=1) == b).cpu())
            if target_model is not None:
                pred_before.append(forward_target(target_model, x).argmax(dim=1).cpu())
                pred_after.append(forward_target(target_model, x_adv).argmax(dim=1).cpu())
        adversarial.append(x_adv.cpu())
        traces.append(trace.cpu())

    if len(batch):
        x_adv = torch.cat(adversarial)
        success = torch.cat(success)
        trace = torch.cat(traces, dim=1)
        linf = (x_adv - batch.pixels).flatten(1).abs().max(dim=1).values
    else:
        x_adv = batch.pixels.clone()
        success = torch.zeros(0, dtype=torch.bool)
        trace = torch.zeros(config.steps + 1, 0)
        linf = torch.zeros(0)

    kept = batch.with_pixels(x_adv, biases=labels, provenance=ADVERSARIAL)
    notes = []
    if config.success_rule == "require-bias-flip":
        kept = kept.subset(success.nonzero(as_tuple=True)[0].tolist())
        if len(batch) and len(kept) == 0:
            notes.append("no example reached its attack label")

    return AttackResult(
        adversarial=kept,
        b_attack=labels,
        success=success,
        linf=linf,
        source_ids=list(batch.source_ids),
        loss_trace=trace,
        target_pred_before=torch.cat(pred_before) if pred_before else None,
        target_pred_after=torch.cat(pred_after) if pred_after else None,
        notes=notes,
    )


def ifgsm_bias_attack(bias_classifier, batch, b_attack, config):
    """Targeted I-FGSM pushing ``bias_classifier`` towards ``b_attack`` (pure L_bias)."""
    with eval_mode(bias_classifier):
        return _attack(
            batch,
            b_attack,
            config,
            lambda b, t: LossSpec(bias_labels=b, bias_weight=1.0, target_weight=0.0),
            bias_classifier,
        )


def joint_attack(model, batch, b_attack, config, bias_classifier=None):
    """I-FGSM on lam * L_bias(b_attack) + (1 - lam) * L_target(t).

    L_bias comes from the coupled classifier {f; h_b} of ``model`` unless a
    standalone ``bias_classifier`` is given; L_target always from ``model``.
    """
    coupled = bias_classifier if bias_classifier is not None else model.bias_classifier("main")
    with eval_mode(model, bias_classifier):
        result = _attack(
            batch,
            b_attack,
            config,
            lambda b, t: LossSpec(
                bias_labels=b,
                target_labels=t,
                bias_weight=config.lam,
                target_weight=1.0 - config.lam,
            ),
            coupled,
            target_model=model,
        )
    if config.lam == 0:
        result.notes.append("lam=0: pure target reinforcement, bias term inactive")
    return result


def plan_balancing_attack(dataset, seed=0):
    """Pick majority-bias examples to attack towards the minority bias value.

    Per class, |n(t, majority) - n(t, minority)| examples are drawn uniformly
    without replacement from the majority cell (the whole cell if smaller).
    """
    generator = make_generator(seed)
    stats = group_stats(dataset)
    plan = []
    for t in range(dataset.num_classes):
        n0, n1 = stats.counts[(t, 0)], stats.counts[(t, 1)]
        if n0 == n1:
            continue
        majority = 0 if n0 > n1 else 1
        deficit = abs(n0 - n1)
        cell = ((dataset.targets == t) & (dataset.biases == majority)).nonzero(as_tuple=True)[0]
        chosen = cell[torch.randperm(len(cell), generator=generator)[:deficit]].sort().values
        plan.extend(
            AttackPlanEntry(dataset.source_ids[i], 1 - majority) for i in chosen.tolist()
        )
    return plan


def plan_batch(dataset, plan):
    """The original examples named by ``plan`` and their attack labels."""
    index = dataset.index_of([entry.source_id for entry in plan])
    b_attack = torch.tensor([entry.b_attack for entry in plan], dtype=torch.long)
    return dataset.subset(index), b_attack
