import os
import time

import pandas as pd
import torch
from omegaconf import OmegaConf

from aeda.utils.utils import save_json


RECORD_COLUMNS = [
    "epoch",
    "train_loss",
    "bacc",
    "overall_bias",
    "transferability",
    "attack_success_rate",
    "target_preservation",
    "learning_rate",
]


def _fmt(value):
    if value is None:
        return "NA"
    if isinstance(value, float):
        return "%.10g" % value
    return str(value)


class Logger:
    """Owns an experiment directory: config echo, epoch records, checkpoints, logs.

    A logger without a directory (``Logger.console()``) only prints, which is
    what library calls and tests use.
    """

    def __init__(self, config=None, experiment_dir=None):
        self.config = config
        self.experiment_id = None
        self.experiment_dir = experiment_dir

        if config is not None and experiment_dir is None:
            self.init_experiment_dir()
        if self.experiment_dir is not None:
            self.init_training_log()

    @classmethod
    def console(cls):
        return cls()

    @property
    def enabled(self):
        return self.experiment_dir is not None

    def init_experiment_dir(self):
        if self.config.training.experiment_id is None:
            self.experiment_id = self.get_timestamp()
            OmegaConf.update(self.config, "training.experiment_id", self.experiment_id)
        else:
            self.experiment_id = self.config.training.experiment_id
        self.experiment_dir = os.path.join(
            self.config.env.experiments_dir, self.experiment_id
        )

    def init_training_log(self):
        os.makedirs(self.experiment_dir, exist_ok=True)
        self.checkpoint_path = os.path.join(self.experiment_dir, "checkpoint.pth.tar")
        self.log_filename = os.path.join(self.experiment_dir, "epoch_records.tsv")
        self.timing_filename = os.path.join(self.experiment_dir, "timing.tsv")
        self.run_log_filename = os.path.join(self.experiment_dir, "run.log")
        if not os.path.exists(self.log_filename):
            with open(self.log_filename, "a") as log_file:
                log_file.write("\t".join(RECORD_COLUMNS) + "\n")
            with open(self.timing_filename, "a") as timing_file:
                timing_file.write("epoch\tepoch_time\ttime_stamp\n")

    def path(self, *parts):
        return os.path.join(self.experiment_dir, *parts)

    def save_config(self):
        config_path = self.path("config.yaml")
        if not os.path.exists(config_path):
            OmegaConf.save(self.config, config_path)

    def get_timestamp(self):
        return str(time.strftime("%Y-%m-%d-%H_%M_%S", time.gmtime()))

    def write(self, text):
        print(text)
        if self.enabled:
            with open(self.run_log_filename, "a") as run_log:
                run_log.write(text + "\n")

    def warn(self, text):
        self.write("WARNING: {}".format(text))

    def update_training_log(self, record):
        time_stamp = str(time.strftime("%Y-%m-%d %H:%M:%S", time.gmtime()))
        self.write(
            "Epoch %d, train loss %g, bACC %s, bias %s, r %s, attack success %s, epoch-time %gs, lr %g"
            % (
                record.epoch,
                record.train_loss,
                _fmt(record.bacc),
                _fmt(record.overall_bias),
                _fmt(record.transferability),
                _fmt(record.attack_success_rate),
                record.wall_time,
                record.learning_rate,
            )
        )
        if not self.enabled:
            return
        row = [_fmt(getattr(record, column)) for column in RECORD_COLUMNS]
        with open(self.log_filename, "a") as log_file:
            log_file.write("\t".join(row) + "\n")
        with open(self.timing_filename, "a") as timing_file:
            timing_file.write("%d\t%gs\t%s\n" % (record.epoch, record.wall_time, time_stamp))

    def save_checkpoint(self, state, is_best=False):
        if not self.enabled:
            return
        torch.save(state, self.checkpoint_path)
        if is_best:
            self.write("Saving best model so far")
            torch.save(state, self.path("best_model.pth.tar"))

    def save_attack_log(self, epoch, attack_result):
        if not self.enabled:
            return
        frame = pd.DataFrame(attack_result.log_records())
        frame.to_csv(self.path("attack_log_epoch{:03d}.csv".format(epoch)), index=False)

    def save_report(self, name, content):
        if not self.enabled:
            return
        save_json(self.path(name), content)


def read_records(run_dir):
    """Epoch records of a run as a DataFrame; absent values are NaN."""
    return pd.read_csv(os.path.join(run_dir, "epoch_records.tsv"), sep="\t", na_values=["NA"])
