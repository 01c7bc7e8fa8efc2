import math

import torch
import torch.optim as optim
from torch.utils.data import DataLoader

from aeda.attacks.ifgsm import run_ifgsm
from aeda.models.composite import eval_mode, loss_bias
from aeda.utils.errors import TrainingDiverged
from aeda.utils.logger import Logger
from aeda.utils.utils import make_generator


class BiasClassifierTrainer:
    """Fits a standalone image -> {0, 1} classifier on the bias labels of a dataset.

    With an ``attack_config`` each mini-batch is also attacked towards the
    flipped label and the classifier is trained on clean and attacked images
    with their true labels (adversarial training).
    """

    def __init__(self, classifier, dataset, config, epochs=None, logger=None, attack_config=None):
        self.classifier = classifier
        self.dataset = dataset
        self.config = config
        self.epochs = config.epochs if epochs is None else epochs
        self.logger = logger or Logger.console()
        self.attack_config = attack_config
        self.device = torch.device(config.device)
        self.classifier.to(self.device)
        self.optimizer = getattr(optim, config.optimizer)(
            self.classifier.parameters(), **config.optimizer_args
        )

    def adversarial_batch(self, x, b):
        def flipped_loss(inputs):
            return loss_bias(self.classifier(inputs), 1 - b, reduction="none")

        with eval_mode(self.classifier):
            x_adv, _ = run_ifgsm(flipped_loss, x, self.attack_config)
        return x_adv

    def train(self):
        losses = []
        for epoch in range(self.epochs):
            self.classifier.train()
            generator = make_generator(self.config.seed * 100003 + epoch * 101 + 3)
            loader = DataLoader(
                self.dataset, batch_size=self.config.batch_size, shuffle=True, generator=generator
            )
            running_loss, n_batches = 0.0, 0
            for x, _, b, _ in loader:
                x, b = x.to(self.device), b.to(self.device)
                loss = loss_bias(self.classifier(x), b)
                if self.attack_config is not None:
                    x_adv = self.adversarial_batch(x, b)
                    loss = 0.5 * (loss + loss_bias(self.classifier(x_adv), b))
                self.optimizer.zero_grad()
                loss.backward()
                self.optimizer.step()
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(epoch, value)
                running_loss += value
                n_batches += 1
            losses.append(running_loss / max(n_batches, 1))
            self.logger.write(
                "Bias classifier epoch %d, train loss %g" % (epoch, losses[-1])
            )
        return self.classifier, losses


def train_bias_classifier(classifier, dataset, config, epochs=None, logger=None, attack_config=None):
    trainer = BiasClassifierTrainer(classifier, dataset, config, epochs, logger, attack_config)
    return trainer.train()


@torch.no_grad()
def bias_accuracy(classifier, dataset, batch_size=256):
    """Percent of ``dataset`` whose bias label ``classifier`` predicts."""
    if len(dataset) == 0:
        return None
    device = next(classifier.parameters()).device
    correct = 0
    with eval_mode(classifier):
        for x, _, b, _ in DataLoader(dataset, batch_size=batch_size, shuffle=False):
            correct += int((classifier(x.to(device)).argmax(dim=1).cpu() == b).sum())
    return 100.0 * correct / len(dataset)
