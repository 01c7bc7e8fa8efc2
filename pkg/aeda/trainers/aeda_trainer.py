import copy
import os

from aeda.attacks.ifgsm import joint_attack, plan_balancing_attack, plan_batch
from aeda.datasets.grouped import GroupedDataset
from aeda.models.composite import StandaloneBiasClassifier, loss_bias
from aeda.trainers.base_trainer import ABORTED_DIVERGENCE, BaseTrainer, EpochOutcome
from aeda.trainers.baseline_trainers import OriginalTrainer
from aeda.trainers.bias_classifier import train_bias_classifier
from aeda.utils.errors import TrainingDiverged
from aeda.utils.logger import Logger
from aeda.utils.utils import seeded_init


class AEDATrainer(BaseTrainer):
    """Shared machinery of the AEDA family: the balancing plan and the attack step."""

    def __init__(self, train_set, test_set, model, config, attack_config, **kwargs):
        self.attack_config = attack_config
        self.adversarial = None
        self.last_attack = None
        super().__init__(train_set, test_set, model, config, **kwargs)

    def load_dataset(self):
        super().load_dataset()
        self.plan = plan_balancing_attack(self.train_set, seed=self.config.seed)
        self.attack_batch, self.attack_labels = plan_batch(self.train_set, self.plan)
        self.logger.write("Balancing plan attacks {} examples".format(len(self.plan)))

    def augmented(self):
        """D_ori plus the current adversarial set."""
        if self.adversarial is None or len(self.adversarial) == 0:
            return self.train_set
        return GroupedDataset.concat([self.train_set, self.adversarial])

    def log_attack(self, epoch, result, last=False):
        if self.attack_log == "all" or (self.attack_log == "last" and last):
            self.logger.save_attack_log(epoch, result)
        for note in result.notes:
            self.logger.warn("epoch {}: {}".format(epoch, note))
        if len(result.success) and result.success_rate == 0:
            self.logger.warn("epoch {}: no attack reached its bias label".format(epoch))


class AEDAPreTrainer(AEDATrainer):
    """Attack once with a preliminary model and a standalone bias classifier, then train on D_augment."""

    method = "aeda_pre"

    def sub_logger(self, name):
        if not self.logger.enabled:
            return Logger.console()
        return Logger(experiment_dir=os.path.join(self.logger.experiment_dir, name))

    def prepare(self):
        self.augmented_set = self.train_set
        if not self.plan:
            self.logger.write("Training data already balanced; training on D_ori only")
            return

        initial_state = copy.deepcopy(self.model.state_dict())
        self.logger.write("Training preliminary target classifier")
        preliminary = OriginalTrainer(
            self.train_set,
            self.test_set,
            self.model,
            self.config,
            logger=self.sub_logger("preliminary"),
        )
        preliminary.train()
        if preliminary.status == ABORTED_DIVERGENCE:
            raise TrainingDiverged(len(preliminary.records), float("nan"))

        self.logger.write("Training standalone bias classifier")
        with seeded_init(self.config.seed + 1):
            bias_classifier = StandaloneBiasClassifier(self.model.config)
        bias_classifier, _ = train_bias_classifier(
            bias_classifier,
            self.train_set,
            self.config,
            epochs=self.config.bias_classifier_epochs,
            logger=self.sub_logger("bias_classifier"),
        )

        result = joint_attack(
            self.model,
            self.attack_batch,
            self.attack_labels,
            self.attack_config,
            bias_classifier=bias_classifier,
        )
        self.last_attack = result
        self.adversarial = result.adversarial
        self.log_attack(0, result, last=True)
        self.logger.write(
            "Generated {} adversarial examples, success rate {:.4f}".format(
                len(self.adversarial), result.success_rate
            )
        )

        if self.config.aeda_pre_init == "scratch":
            self.model.load_state_dict(initial_state)
        self.augmented_set = self.augmented()

    def train_epoch(self, epoch):
        outcome = EpochOutcome(
            train_loss=self.run_target_epoch(self.augmented_set, epoch),
            probe_set=self.adversarial,
        )
        if self.last_attack is not None:
            outcome.attack_success_rate = self.last_attack.success_rate
            outcome.target_preservation = self.last_attack.target_preservation_rate
        return outcome


class AEDAOnlineTrainer(AEDATrainer):
    """Per epoch: (f, h_t) on D_ori + X_adv^(m-1), then h_b with f frozen, then X_adv^(m) <- attack."""

    method = "aeda_online"
    adversarial_interval = None

    def build_optimizer(self):
        super().build_optimizer()
        self.bias_optimizer = self.make_optimizer(self.model.parameters_of("bias_head"))

    def regenerates(self, epoch):
        cutoff = self.config.online_cutoff_epoch
        return cutoff is None or epoch < cutoff

    def bias_head_adversarial(self):
        """X_adv^(m-1) as seen by the bias-head step, with labels per ``robust_label_mode``."""
        adversarial = self.adversarial
        if self.config.robust_label_mode == "original":
            adversarial = adversarial.with_pixels(
                adversarial.pixels, biases=adversarial.source_biases
            )
        return adversarial

    def bias_batches(self, epoch):
        batches = self.loader(self.train_set, "bias", epoch)
        k = self.adversarial_interval
        if k is None or self.adversarial is None or len(self.adversarial) == 0:
            yield from batches
            return

        adversarial_loader = self.loader(self.bias_head_adversarial(), "adversarial", epoch)

        def cycle():
            while True:
                yield from adversarial_loader

        adversarial_batches = cycle()
        for j, batch in enumerate(batches, start=1):
            # every k-th mini-batch is adversarial
            yield next(adversarial_batches) if j % k == 0 else batch

    def run_bias_head_epoch(self, epoch):
        self.model.eval()
        with self.model.frozen("extractor", "target_head"):
            for batch in self.bias_batches(epoch):
                x, _, b, _ = self.to_device(batch)
                features = self.model.features(x).detach()
                loss = loss_bias(self.model.bias_head(features), b)
                self.bias_optimizer.zero_grad()
                loss.backward()
                self.bias_optimizer.step()

    def attack(self, epoch):
        result = joint_attack(self.model, self.attack_batch, self.attack_labels, self.attack_config)
        self.last_attack = result
        self.adversarial = result.adversarial
        self.log_attack(epoch, result, last=epoch == self.config.epochs - 1)
        return result

    def train_epoch(self, epoch):
        before = self.model.component_hashes()
        train_loss = self.run_target_epoch(self.augmented(), epoch)
        after = self.check_step(epoch, "target", before, allowed=("extractor", "target_head"))

        self.run_bias_head_epoch(epoch)
        after = self.check_step(epoch, "bias_head", after, allowed=("bias_head",))

        outcome = EpochOutcome(train_loss=train_loss)
        if self.plan and self.regenerates(epoch):
            result = self.attack(epoch)
            self.check_step(epoch, "attack", after, allowed=())
            outcome.attack_success_rate = result.success_rate
            outcome.target_preservation = result.target_preservation_rate
        outcome.probe_set = self.adversarial
        return outcome


class AEDAOnceTrainer(AEDAOnlineTrainer):
    """AEDA_online with the attack step run only at epoch 0."""

    method = "aeda_once"

    def regenerates(self, epoch):
        return epoch == 0


class AEDARobustTrainer(AEDAOnlineTrainer):
    """AEDA_online whose bias head also trains on X_adv^(m-1) every k-th mini-batch."""

    method = "aeda_robust"

    @property
    def adversarial_interval(self):
        return self.config.k


def _run(trainer_cls, train_set, test_set, model, config, attack_config, **kwargs):
    trainer = trainer_cls(train_set, test_set, model, config, attack_config, **kwargs)
    return trainer.train()


def train_aeda_pre(train_set, test_set, model, config, attack_config, **kwargs):
    return _run(AEDAPreTrainer, train_set, test_set, model, config, attack_config, **kwargs)


def train_aeda_online(train_set, test_set, model, config, attack_config, **kwargs):
    return _run(AEDAOnlineTrainer, train_set, test_set, model, config, attack_config, **kwargs)


def train_aeda_once(train_set, test_set, model, config, attack_config, **kwargs):
    return _run(AEDAOnceTrainer, train_set, test_set, model, config, attack_config, **kwargs)


def train_aeda_robust(train_set, test_set, model, config, attack_config, **kwargs):
    return _run(AEDARobustTrainer, train_set, test_set, model, config, attack_config, **kwargs)
