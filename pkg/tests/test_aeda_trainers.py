import torch

from aeda.attacks import AttackConfig
from aeda.datasets import group_stats
from aeda.tasks.transferability import ProbeConfig
from aeda.trainers import (
    ABORTED_DIVERGENCE,
    AEDAOnceTrainer,
    AEDAOnlineTrainer,
    AEDAPreTrainer,
    AEDARobustTrainer,
    OriginalTrainer,
    build_trainer,
    train_aeda_pre,
    train_original,
)
from aeda.utils.errors import TrainingDiverged
from aeda.utils.utils import state_sha256

from conftest import balanced_counts, make_dataset


def attack(**fields):
    fields.setdefault("steps", 2)
    return AttackConfig(**fields)


class TestOnline:
    def test_step_order_journal(self, make_model, train_config, skewed_train, fair_test):
        trainer = AEDAOnlineTrainer(
            skewed_train, fair_test, make_model(), train_config(method="aeda_online"), attack()
        )
        trainer.train()
        steps = [(entry["epoch"], entry["step"]) for entry in trainer.journal]
        assert steps == [
            (0, "target"), (0, "bias_head"), (0, "attack"),
            (1, "target"), (1, "bias_head"), (1, "attack"),
        ]
        for entry in trainer.journal:
            if entry["step"] == "target":
                assert set(entry["changed"]) <= {"extractor", "target_head"}
            elif entry["step"] == "bias_head":
                assert entry["changed"] == ["bias_head"]
            else:
                assert entry["changed"] == []

    def test_attack_labels_and_size(self, make_model, train_config, skewed_train, fair_test):
        trainer = AEDAOnlineTrainer(
            skewed_train, fair_test, make_model(), train_config(method="aeda_online", epochs=1), attack()
        )
        trainer.train()
        # 16 majority examples per class attacked towards the minority colour
        assert len(trainer.plan) == 64
        assert len(trainer.adversarial) == 64
        counts = group_stats(trainer.augmented()).counts
        assert set(counts.values()) == {24}

    def test_zero_budget_duplicates_originals(self, make_model, train_config, skewed_train, fair_test):
        trainer = AEDAOnlineTrainer(
            skewed_train,
            fair_test,
            make_model(),
            train_config(method="aeda_online", epochs=1),
            attack(epsilon=0.0),
        )
        trainer.train()
        adversarial = trainer.adversarial
        originals = skewed_train.subset(skewed_train.index_of(adversarial.source_ids))
        assert torch.equal(adversarial.pixels, originals.pixels)
        assert torch.equal(adversarial.biases, 1 - originals.biases)

    def test_cutoff_stops_regeneration(self, make_model, train_config, skewed_train, fair_test):
        trainer = AEDAOnlineTrainer(
            skewed_train,
            fair_test,
            make_model(),
            train_config(method="aeda_online", epochs=3, online_cutoff_epoch=1),
            attack(),
        )
        _, records = trainer.train()
        attacks = [entry["epoch"] for entry in trainer.journal if entry["step"] == "attack"]
        assert attacks == [0]
        assert records[0].attack_success_rate is not None
        assert records[2].attack_success_rate is None

    def test_records_carry_probe(self, make_model, train_config, skewed_train, fair_test):
        trainer = AEDAOnlineTrainer(
            skewed_train,
            fair_test,
            make_model(),
            train_config(method="aeda_online"),
            attack(),
            probe_config=ProbeConfig(probe_epochs=1, batch_size=16),
        )
        _, records = trainer.train()
        assert all(r.transferability is not None for r in records)
        assert all(0.0 <= r.transferability <= 100.0 for r in records)


class TestOnce:
    def test_attacks_only_at_first_epoch(self, make_model, train_config, skewed_train, fair_test):
        trainer = AEDAOnceTrainer(
            skewed_train, fair_test, make_model(), train_config(method="aeda_once", epochs=3), attack()
        )
        trainer.train()
        first = trainer.last_attack.adversarial.pixels.clone()
        attacks = [entry["epoch"] for entry in trainer.journal if entry["step"] == "attack"]
        assert attacks == [0]
        assert torch.equal(trainer.adversarial.pixels, first)


class TestRobust:
    def test_huge_interval_reduces_to_online(self, make_model, train_config, skewed_train, fair_test):
        online_model, robust_model = make_model(), make_model()
        online = AEDAOnlineTrainer(
            skewed_train, fair_test, online_model, train_config(method="aeda_online"), attack()
        )
        robust = AEDARobustTrainer(
            skewed_train, fair_test, robust_model, train_config(method="aeda_robust", k=10 ** 6), attack()
        )
        _, online_records = online.train()
        _, robust_records = robust.train()
        assert state_sha256(online_model) == state_sha256(robust_model)
        assert torch.equal(online.adversarial.pixels, robust.adversarial.pixels)
        assert [r.train_loss for r in online_records] == [r.train_loss for r in robust_records]

    def test_every_kth_bias_batch_is_adversarial(self, make_model, train_config, skewed_train, fair_test):
        for k, expected in [(1, 8), (2, 4), (3, 2)]:
            trainer = AEDARobustTrainer(
                skewed_train, fair_test, make_model(), train_config(method="aeda_robust", k=k), attack()
            )
            zeros = skewed_train.subset(range(10)).with_pixels(torch.zeros(10, 3, 8, 8))
            trainer.adversarial = zeros
            batches = list(trainer.bias_batches(epoch=0))
            # 128 training examples in batches of 16
            assert len(batches) == 8
            assert sum(int(x.sum() == 0) for x, _, _, _ in batches) == expected

    def test_robust_label_modes(self, make_model, train_config, skewed_train, fair_test):
        adversarial = skewed_train.subset(range(6))
        adversarial = adversarial.with_pixels(adversarial.pixels, biases=1 - adversarial.biases)
        for mode, expected in [
            ("original", adversarial.source_biases),
            ("attacked", adversarial.biases),
        ]:
            trainer = AEDARobustTrainer(
                skewed_train,
                fair_test,
                make_model(),
                train_config(method="aeda_robust", robust_label_mode=mode),
                attack(),
            )
            trainer.adversarial = adversarial
            assert torch.equal(trainer.bias_head_adversarial().biases, expected)

    def test_extractor_frozen_during_bias_step(self, make_model, train_config, skewed_train, fair_test):
        trainer = AEDARobustTrainer(
            skewed_train, fair_test, make_model(), train_config(method="aeda_robust", k=2), attack()
        )
        trainer.train()
        bias_steps = [entry for entry in trainer.journal if entry["step"] == "bias_head"]
        assert bias_steps
        assert all("extractor" not in entry["changed"] for entry in bias_steps)


class TestPre:
    def test_balanced_input_matches_original(self, make_model, train_config, fair_test):
        balanced = make_dataset(balanced_counts(8))
        original_model, pre_model = make_model(), make_model()
        _, original_records = train_original(balanced, fair_test, original_model, train_config())
        _, pre_records = train_aeda_pre(
            balanced, fair_test, pre_model, train_config(method="aeda_pre"), attack()
        )
        assert state_sha256(original_model) == state_sha256(pre_model)
        assert [r.train_loss for r in original_records] == [r.train_loss for r in pre_records]

    def test_augments_to_balance(self, make_model, train_config, skewed_train, fair_test):
        trainer = AEDAPreTrainer(
            skewed_train,
            fair_test,
            make_model(),
            train_config(method="aeda_pre", epochs=1, bias_classifier_epochs=1),
            attack(),
        )
        trainer.train()
        assert len(trainer.adversarial) == len(trainer.plan) == 64
        assert set(group_stats(trainer.augmented_set).counts.values()) == {24}

    def test_scratch_restores_initial_weights(self, make_model, train_config, skewed_train, fair_test):
        model = make_model()
        initial = state_sha256(model)
        trainer = AEDAPreTrainer(
            skewed_train,
            fair_test,
            model,
            train_config(method="aeda_pre", epochs=1, bias_classifier_epochs=1),
            attack(),
        )
        trainer.prepare()
        assert state_sha256(model) == initial

    def test_finetune_keeps_preliminary_weights(self, make_model, train_config, skewed_train, fair_test):
        model = make_model()
        initial = state_sha256(model)
        trainer = AEDAPreTrainer(
            skewed_train,
            fair_test,
            model,
            train_config(method="aeda_pre", epochs=1, bias_classifier_epochs=1, aeda_pre_init="finetune"),
            attack(),
        )
        trainer.prepare()
        assert state_sha256(model) != initial

    def test_preliminary_divergence_aborts(
        self, monkeypatch, make_model, train_config, skewed_train, fair_test
    ):
        monkeypatch.setattr(
            OriginalTrainer, "training_step", lambda self, x, t, b, idx: torch.tensor(float("nan"))
        )
        trainer = AEDAPreTrainer(
            skewed_train,
            fair_test,
            make_model(),
            train_config(method="aeda_pre", bias_classifier_epochs=1),
            attack(),
        )
        _, records = trainer.train()
        assert trainer.status == ABORTED_DIVERGENCE
        assert trainer.adversarial is None
        assert records == []

    def test_bias_classifier_divergence_aborts(
        self, monkeypatch, make_model, train_config, skewed_train, fair_test
    ):
        def diverge(*args, **kwargs):
            raise TrainingDiverged(0, float("nan"))

        monkeypatch.setattr("aeda.trainers.aeda_trainer.train_bias_classifier", diverge)
        trainer = AEDAPreTrainer(
            skewed_train,
            fair_test,
            make_model(),
            train_config(method="aeda_pre", epochs=1),
            attack(),
        )
        _, records = trainer.train()
        assert trainer.status == ABORTED_DIVERGENCE
        assert records == []


def test_build_trainer_dispatch(make_model, train_config, skewed_train, fair_test):
    trainer = build_trainer(
        skewed_train, fair_test, make_model(), train_config(method="aeda_robust"), attack()
    )
    assert isinstance(trainer, AEDARobustTrainer)
    assert trainer.adversarial_interval == 2
