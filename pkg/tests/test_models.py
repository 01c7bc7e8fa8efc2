import math

import pytest
import torch
from omegaconf import OmegaConf
from torch.autograd import gradcheck

from aeda.models import (
    CompositeClassifier,
    LossSpec,
    eval_mode,
    forward_bias,
    forward_target,
    gradient_wrt_input,
    loss_bias,
    loss_target,
)
from aeda.models.composite import StandaloneBiasClassifier
from aeda.modules.backbones import BACKBONES
from aeda.modules.heads import grad_reverse
from aeda.utils.utils import make_generator, seeded_init


@pytest.fixture
def batch():
    return torch.rand(5, 3, 8, 8, generator=make_generator(0))


class TestForward:
    def test_logit_shapes(self, make_model, batch):
        model = make_model()
        assert forward_target(model, batch).shape == (5, 4)
        assert forward_bias(model, batch).shape == (5, 2)
        assert forward_bias(model, batch, head="probe").shape == (5, 2)

    def test_zero_heads_give_zero_logits(self, make_model, batch):
        model = make_model()
        for head in (model.target_head, model.bias_head):
            torch.nn.init.zeros_(head.weight)
            torch.nn.init.zeros_(head.bias)
        assert torch.count_nonzero(forward_target(model, batch)) == 0
        assert torch.count_nonzero(forward_bias(model, batch)) == 0

    def test_duplicated_inputs_give_identical_rows(self, make_model, batch):
        model = make_model()
        doubled = torch.cat([batch[:1], batch[:1]])
        with eval_mode(model):
            logits = forward_target(model, doubled)
        assert torch.equal(logits[0], logits[1])

    def test_softmax_rows_sum_to_one(self, make_model, batch):
        probs = forward_target(make_model(), batch).softmax(dim=1)
        assert torch.allclose(probs.sum(dim=1), torch.ones(5), atol=1e-6)

    def test_shape_mismatch_rejected(self, make_model):
        with pytest.raises(ValueError):
            forward_target(make_model(), torch.rand(2, 1, 8, 8))

    def test_unknown_head_rejected(self, make_model, batch):
        with pytest.raises(ValueError):
            forward_bias(make_model(), batch, head="other")

    @pytest.mark.parametrize("backbone", sorted(BACKBONES))
    def test_every_backbone_preset_builds(self, model_config, backbone):
        config = OmegaConf.merge(model_config, {"backbone": backbone})
        with seeded_init(0):
            model = CompositeClassifier(config)
        x = torch.rand(2, 3, 32, 32, generator=make_generator(1))
        assert forward_target(model, x).shape == (2, 4)
        assert forward_bias(model, x).shape == (2, 2)

    def test_standalone_classifier_is_independent(self, model_config):
        with seeded_init(0):
            composite = CompositeClassifier(model_config)
            standalone = StandaloneBiasClassifier(model_config)
        ids = {id(p) for p in composite.parameters()}
        assert all(id(p) not in ids for p in standalone.parameters())


class TestLosses:
    def test_uniform_logits_give_log_classes(self):
        logits = torch.zeros(3, 4)
        assert loss_target(logits, torch.tensor([0, 1, 3])).item() == pytest.approx(math.log(4))
        assert loss_bias(torch.zeros(2, 2), torch.tensor([0, 1])).item() == pytest.approx(math.log(2))

    def test_large_margin_gives_zero_loss(self):
        logits = torch.tensor([[100.0, 0.0], [0.0, 100.0]])
        assert loss_bias(logits, torch.tensor([0, 1])).item() == pytest.approx(0.0, abs=1e-6)

    def test_matches_hand_computed_cross_entropy(self):
        logits = torch.tensor([[1.0, 2.0, 0.5], [0.0, -1.0, 3.0]])
        labels = torch.tensor([1, 2])
        expected = 0.0
        for row, label in zip(logits.tolist(), labels.tolist()):
            expected += -row[label] + math.log(sum(math.exp(v) for v in row))
        assert loss_target(logits, labels).item() == pytest.approx(expected / 2, abs=1e-6)

    def test_weights_scale_each_example(self):
        logits = torch.zeros(2, 4)
        labels = torch.tensor([0, 1])
        weighted = loss_target(logits, labels, weights=torch.tensor([0.5, 1.5]), reduction="none")
        assert weighted.tolist() == pytest.approx([0.5 * math.log(4), 1.5 * math.log(4)])

    def test_labels_out_of_range(self):
        with pytest.raises(ValueError):
            loss_bias(torch.zeros(1, 2), torch.tensor([2]))


class TestInputGradient:
    def test_constant_model_has_zero_gradient(self, make_model, batch):
        model = make_model()
        with torch.no_grad():
            for name, p in model.named_parameters():
                if name.endswith("weight"):
                    p.zero_()
        spec = LossSpec(bias_labels=torch.zeros(5, dtype=torch.long))
        assert torch.count_nonzero(gradient_wrt_input(model, batch, spec)) == 0

    def test_scaling_the_loss_scales_the_gradient(self, make_model, batch):
        model = make_model()
        labels = torch.ones(5, dtype=torch.long)
        grad = gradient_wrt_input(model, batch, LossSpec(bias_labels=labels))
        doubled = gradient_wrt_input(model, batch, LossSpec(bias_labels=labels, scale=2.0))
        assert torch.allclose(doubled, 2 * grad, atol=1e-6)

    def test_parameters_receive_no_gradient(self, make_model, batch):
        model = make_model()
        gradient_wrt_input(model, batch, LossSpec(bias_labels=torch.zeros(5, dtype=torch.long)))
        assert all(p.grad is None for p in model.parameters())

    def test_spec_without_terms_rejected(self, make_model, batch):
        with pytest.raises(ValueError):
            gradient_wrt_input(make_model(), batch, LossSpec(bias_weight=0.0, target_weight=0.0))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_central_finite_differences(self, make_model, seed):
        model = make_model().double()
        generator = make_generator(100 + seed)
        x = torch.rand(3, 3, 8, 8, generator=generator, dtype=torch.float64)
        spec = LossSpec(
            bias_labels=torch.randint(0, 2, (3,), generator=generator),
            target_labels=torch.randint(0, 4, (3,), generator=generator),
            bias_weight=0.7,
            target_weight=0.3,
        )
        grad = gradient_wrt_input(model, x, spec)

        h = 1e-3
        coordinates = torch.randperm(x.numel(), generator=generator)[:10]
        for flat in coordinates.tolist():
            plus, minus = x.clone().view(-1), x.clone().view(-1)
            plus[flat] += h
            minus[flat] -= h
            with torch.no_grad():
                numeric = (
                    spec(model, plus.view_as(x)) - spec(model, minus.view_as(x))
                ).item() / (2 * h)
            analytic = grad.view(-1)[flat].item()
            assert analytic == pytest.approx(numeric, rel=1e-2, abs=1e-7)

    def test_gradcheck(self, make_model):
        model = make_model().double()
        labels = torch.tensor([0, 1])

        def loss(x):
            return LossSpec(bias_labels=labels)(model, x)

        x = torch.rand(2, 3, 4, 4, dtype=torch.float64, requires_grad=True)
        assert gradcheck(loss, (x,), eps=1e-6, atol=1e-4, rtol=1e-3)


class TestComponents:
    def test_frozen_restores_requires_grad(self, make_model):
        model = make_model()
        with model.frozen("extractor"):
            assert not any(p.requires_grad for p in model.extractor.parameters())
            assert all(p.requires_grad for p in model.bias_head.parameters())
        assert all(p.requires_grad for p in model.extractor.parameters())

    def test_eval_mode_restores_training_flag(self, make_model):
        model = make_model()
        model.train()
        with eval_mode(model):
            assert not model.training
        assert model.training

    def test_component_hash_tracks_updates(self, make_model):
        model = make_model()
        before = model.component_hashes()
        with torch.no_grad():
            model.bias_head.bias.add_(1.0)
        after = model.component_hashes()
        assert [name for name in before if before[name] != after[name]] == ["bias_head"]


@pytest.mark.parametrize("strength", [0.5, 1.0, 2.0])
def test_grad_reverse_flips_gradient(strength):
    x = torch.randn(4, 3, requires_grad=True)
    out = grad_reverse(x, strength)
    assert torch.equal(out, x)
    out.sum().backward()
    assert torch.allclose(x.grad, torch.full_like(x, -strength))
