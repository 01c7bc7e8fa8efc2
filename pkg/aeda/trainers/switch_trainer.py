from dataclasses import dataclass, field
from typing import Dict

import pandas as pd

from aeda.attacks.ifgsm import ifgsm_bias_attack
from aeda.datasets.grouped import ORIGINAL
from aeda.models.composite import StandaloneBiasClassifier
from aeda.trainers.bias_classifier import bias_accuracy, train_bias_classifier
from aeda.utils.logger import Logger
from aeda.utils.utils import seeded_init


SWITCH_SETTINGS = ("hard_switch", "adv_switch", "adv_switch_robust")


@dataclass
class SwitchTable:
    """Generalization accuracy (percent, original test images, true bias labels) per setting."""

    accuracy: Dict[str, float]
    reference_accuracy: float
    attack_success: Dict[str, float] = field(default_factory=dict)
    training_size: Dict[str, int] = field(default_factory=dict)

    def ordering_holds(self):
        a = self.accuracy
        if any(a[setting] is None for setting in SWITCH_SETTINGS):
            return False
        return a["adv_switch_robust"] > a["adv_switch"] > a["hard_switch"]

    def to_frame(self):
        rows = [
            {
                "setting": setting,
                "accuracy": self.accuracy[setting],
                "attack_success_rate": self.attack_success.get(setting),
                "n_train": self.training_size.get(setting),
            }
            for setting in SWITCH_SETTINGS
        ]
        rows.append(
            {"setting": "g_ori", "accuracy": self.reference_accuracy, "attack_success_rate": None, "n_train": None}
        )
        return pd.DataFrame(rows)


def _flipped(dataset):
    return dataset.with_pixels(dataset.pixels, biases=1 - dataset.biases, provenance=ORIGINAL)


class SwitchExperiment:
    """Train bias classifiers on label-switched data and test them on real images.

    Hard switch keeps the original images and flips b; ADV switch attacks
    g_ori towards 1 - b and keeps the attacked labels; the robust variant
    attacks an adversarially trained g_robust instead.
    """

    def __init__(self, train_set, test_set, model_config, config, attack_config, epochs=None, logger=None):
        self.train_set = train_set
        self.test_set = test_set
        self.model_config = model_config
        self.config = config
        self.attack_config = attack_config
        self.epochs = epochs
        self.logger = logger or Logger.console()

    def new_classifier(self, offset):
        with seeded_init(self.config.seed * 1009 + offset):
            return StandaloneBiasClassifier(self.model_config)

    def fit(self, dataset, offset, attack_config=None):
        classifier, _ = train_bias_classifier(
            self.new_classifier(offset),
            dataset,
            self.config,
            epochs=self.epochs,
            logger=self.logger,
            attack_config=attack_config,
        )
        return classifier

    def switched_by_attack(self, classifier):
        result = ifgsm_bias_attack(
            classifier, self.train_set, 1 - self.train_set.biases, self.attack_config
        )
        return result.adversarial, result.success_rate

    def run(self):
        accuracy, attack_success, training_size = {}, {}, {}

        self.logger.write("Training g_ori on true bias labels")
        g_ori = self.fit(self.train_set, offset=0)
        reference = bias_accuracy(g_ori, self.test_set)

        hard = _flipped(self.train_set)
        accuracy["hard_switch"] = bias_accuracy(self.fit(hard, offset=1), self.test_set)
        training_size["hard_switch"] = len(hard)

        adv, attack_success["adv_switch"] = self.switched_by_attack(g_ori)
        training_size["adv_switch"] = len(adv)
        accuracy["adv_switch"] = (
            bias_accuracy(self.fit(adv, offset=2), self.test_set) if len(adv) else None
        )

        self.logger.write("Adversarially training g_robust")
        g_robust = self.fit(self.train_set, offset=3, attack_config=self.attack_config)
        adv_robust, attack_success["adv_switch_robust"] = self.switched_by_attack(g_robust)
        training_size["adv_switch_robust"] = len(adv_robust)
        accuracy["adv_switch_robust"] = (
            bias_accuracy(self.fit(adv_robust, offset=4), self.test_set) if len(adv_robust) else None
        )

        table = SwitchTable(accuracy, reference, attack_success, training_size)
        for setting in SWITCH_SETTINGS:
            self.logger.write("{}: accuracy {}".format(setting, accuracy[setting]))
        return table


def run_switch_experiments(train_set, test_set, model_config, config, attack_config, epochs=None, logger=None):
    return SwitchExperiment(
        train_set, test_set, model_config, config, attack_config, epochs, logger
    ).run()
