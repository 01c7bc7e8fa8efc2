import pytest
import torch
from torch.utils.data import DataLoader

from aeda.datasets import group_stats
from aeda.models import loss_bias
from aeda.trainers import (
    ABORTED_DIVERGENCE,
    CONVERGED,
    EPOCH_LIMIT,
    AdvDebiasTrainer,
    DownsamplingTrainer,
    OriginalTrainer,
    ReweightingTrainer,
    TrainConfig,
    has_converged,
    train_adv_debias,
    train_original,
)
from aeda.trainers.baseline_trainers import downsample, reweighting_weights
from aeda.trainers.bias_classifier import bias_accuracy
from aeda.utils.errors import ConfigError, MethodInapplicable, StepOrderViolation
from aeda.utils.utils import state_sha256

from conftest import balanced_counts, make_dataset


class TestConvergence:
    def test_needs_min_epochs(self):
        assert not has_converged([1.0] * 10, window=5, threshold=1e-3, min_epochs=20)

    def test_plateau(self):
        assert has_converged([1.0] * 6, window=5, threshold=1e-3, min_epochs=0)

    def test_improving(self):
        losses = [1.0, 0.8, 0.6, 0.4, 0.2, 0.1]
        assert not has_converged(losses, window=5, threshold=1e-3, min_epochs=0)

    def test_window_not_filled(self):
        assert not has_converged([1.0] * 5, window=5, threshold=1e-3, min_epochs=0)

    def test_zero_loss(self):
        assert has_converged([0.0] * 3, window=2, threshold=1e-3, min_epochs=0)


class TestTrainConfig:
    @pytest.mark.parametrize(
        "fields",
        [
            {"method": "other"},
            {"epochs": -1},
            {"k": 0},
            {"robust_label_mode": "flipped"},
            {"aeda_pre_init": "warm"},
            {"reversal_strength": -1.0},
            {"optimizer": "NoSuchOptimizer"},
        ],
    )
    def test_invalid(self, fields):
        with pytest.raises(ConfigError):
            TrainConfig(**fields)


class TestDownsampling:
    def test_keeps_minimum_cell(self):
        dataset = make_dataset({(0, 0): 60, (0, 1): 20}, num_classes=1)
        counts = group_stats(downsample(dataset)).counts
        assert counts == {(0, 0): 20, (0, 1): 20}

    def test_balanced_keeps_everything(self):
        dataset = make_dataset(balanced_counts(5))
        assert downsample(dataset).source_ids == dataset.source_ids

    def test_empty_cell_is_inapplicable(self, make_model, train_config, fair_test):
        dataset = make_dataset({(t, 0): 5 for t in range(4)})
        with pytest.raises(MethodInapplicable) as err:
            DownsamplingTrainer(dataset, fair_test, make_model(), train_config(method="downsampling"))
        assert (0, 1) in err.value.empty_cells


class TestReweighting:
    def test_hand_normalised_weights(self):
        dataset = make_dataset({(0, 0): 60, (0, 1): 20}, num_classes=1)
        weights = reweighting_weights(dataset)
        assert weights[0].tolist() == pytest.approx([0.5, 1.5])

    def test_balanced_weights_are_one(self):
        weights = reweighting_weights(make_dataset(balanced_counts(7)))
        assert weights.flatten().tolist() == pytest.approx([1.0] * 8)

    def test_empty_cell_is_inapplicable(self, make_model, train_config, fair_test):
        dataset = make_dataset({(t, 1): 5 for t in range(4)})
        with pytest.raises(MethodInapplicable):
            ReweightingTrainer(dataset, fair_test, make_model(), train_config(method="reweighting"))

    def test_trains(self, make_model, train_config, skewed_train, fair_test):
        trainer = ReweightingTrainer(
            skewed_train, fair_test, make_model(), train_config(method="reweighting")
        )
        _, records = trainer.train()
        assert len(records) == 2
        assert trainer.status == EPOCH_LIMIT


class TestOriginal:
    def test_zero_epochs_returns_input_model(self, make_model, train_config, skewed_train, fair_test):
        model = make_model()
        before = state_sha256(model)
        returned, records = train_original(skewed_train, fair_test, model, train_config(epochs=0))
        assert returned is model
        assert state_sha256(returned) == before
        assert records == []

    def test_bias_head_untouched(self, make_model, train_config, skewed_train, fair_test):
        model = make_model()
        before = model.component_hash("bias_head")
        train_original(skewed_train, fair_test, model, train_config())
        assert model.component_hash("bias_head") == before

    def test_records(self, make_model, train_config, skewed_train, fair_test):
        _, records = train_original(skewed_train, fair_test, make_model(), train_config(epochs=3))
        assert [r.epoch for r in records] == [0, 1, 2]
        assert all(r.bacc is not None and r.transferability is None for r in records)
        # milestone at half the epochs
        assert records[0].learning_rate == pytest.approx(0.01)
        assert records[2].learning_rate == pytest.approx(0.001)

    def test_same_seed_same_trajectory(self, make_model, train_config, skewed_train, fair_test):
        first, second = make_model(), make_model()
        _, a = train_original(skewed_train, fair_test, first, train_config())
        _, b = train_original(skewed_train, fair_test, second, train_config())
        assert state_sha256(first) == state_sha256(second)
        assert [r.train_loss for r in a] == [r.train_loss for r in b]

    def test_convergence_stops_training(self, make_model, train_config, skewed_train, fair_test):
        config = train_config(
            epochs=10, early_stop=True, plateau_window=1, plateau_threshold=1e9, min_epochs=0
        )
        trainer = OriginalTrainer(skewed_train, fair_test, make_model(), config)
        _, records = trainer.train()
        assert len(records) == 2
        assert trainer.status == CONVERGED

    def test_divergence_aborts(self, make_model, train_config, skewed_train, fair_test):
        class Diverging(OriginalTrainer):
            def training_step(self, x, t, b, idx):
                return torch.tensor(float("nan"))

        trainer = Diverging(skewed_train, fair_test, make_model(), train_config())
        _, records = trainer.train()
        assert trainer.status == ABORTED_DIVERGENCE
        assert records == []

    def test_step_journal_flags_illegal_mutation(self, make_model, train_config, skewed_train, fair_test):
        trainer = OriginalTrainer(skewed_train, fair_test, make_model(), train_config())
        before = trainer.model.component_hashes()
        with torch.no_grad():
            trainer.model.extractor.fc.bias.add_(1.0)
        with pytest.raises(StepOrderViolation):
            trainer.check_step(0, "bias_head", before, allowed=("bias_head",))
        assert trainer.journal[-1]["changed"] == ["extractor"]


class TestAdvDebias:
    def test_zero_strength_matches_original(self, make_model, train_config, skewed_train, fair_test):
        original, debiased = make_model(), make_model()
        _, records = train_original(skewed_train, fair_test, original, train_config())
        _, debias_records = train_adv_debias(
            skewed_train,
            fair_test,
            debiased,
            train_config(method="adv_debias", reversal_strength=0.0),
        )
        for name in ("extractor", "target_head"):
            assert original.component_hash(name) == debiased.component_hash(name)
        assert [r.train_loss for r in records] == [r.train_loss for r in debias_records]
        assert original.component_hash("bias_head") != debiased.component_hash("bias_head")

    def test_reversal_changes_extractor_trajectory(self, make_model, train_config, skewed_train, fair_test):
        original, debiased = make_model(), make_model()
        train_original(skewed_train, fair_test, original, train_config(epochs=1))
        AdvDebiasTrainer(
            skewed_train, fair_test, debiased, train_config(method="adv_debias", epochs=1)
        ).train()
        assert original.component_hash("extractor") != debiased.component_hash("extractor")

    def test_bias_head_is_confused(self, make_model, train_config, skewed_train, fair_test):
        config = dict(epochs=5, optimizer_args={"lr": 0.05, "momentum": 0.9})
        original, debiased = make_model(), make_model()
        train_original(skewed_train, fair_test, original, train_config(**config))
        train_adv_debias(skewed_train, fair_test, debiased, train_config(method="adv_debias", **config))

        # bias head fitted on the frozen features of the Original model
        optimizer = torch.optim.SGD(original.bias_head.parameters(), lr=0.1, momentum=0.9)
        with original.frozen("extractor", "target_head"):
            for _ in range(30):
                for x, _, b, _ in DataLoader(skewed_train, batch_size=16, shuffle=False):
                    loss = loss_bias(original.bias_head(original.features(x).detach()), b)
                    optimizer.zero_grad()
                    loss.backward()
                    optimizer.step()

        assert bias_accuracy(debiased.bias_classifier(), skewed_train) <= bias_accuracy(
            original.bias_classifier(), skewed_train
        )
