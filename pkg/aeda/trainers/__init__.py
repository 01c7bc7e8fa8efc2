from aeda.trainers.base_trainer import (
    ABORTED_DIVERGENCE,
    CONVERGED,
    EPOCH_LIMIT,
    INAPPLICABLE,
    METHODS,
    EpochRecord,
    TrainConfig,
    has_converged,
)
from aeda.trainers.baseline_trainers import (
    AdvDebiasTrainer,
    DownsamplingTrainer,
    OriginalTrainer,
    ReweightingTrainer,
    train_adv_debias,
    train_downsampling,
    train_original,
    train_reweighting,
)
from aeda.trainers.aeda_trainer import (
    AEDAOnceTrainer,
    AEDAOnlineTrainer,
    AEDAPreTrainer,
    AEDARobustTrainer,
    train_aeda_once,
    train_aeda_online,
    train_aeda_pre,
    train_aeda_robust,
)
from aeda.trainers.switch_trainer import SwitchTable, run_switch_experiments


TRAINERS = {
    "original": OriginalTrainer,
    "downsampling": DownsamplingTrainer,
    "reweighting": ReweightingTrainer,
    "adv_debias": AdvDebiasTrainer,
    "aeda_pre": AEDAPreTrainer,
    "aeda_once": AEDAOnceTrainer,
    "aeda_online": AEDAOnlineTrainer,
    "aeda_robust": AEDARobustTrainer,
}
AEDA_METHODS = ("aeda_pre", "aeda_once", "aeda_online", "aeda_robust")


def build_trainer(train_set, test_set, model, config, attack_config=None, **kwargs):
    trainer_cls = TRAINERS[config.method]
    if config.method in AEDA_METHODS:
        return trainer_cls(train_set, test_set, model, config, attack_config, **kwargs)
    return trainer_cls(train_set, test_set, model, config, **kwargs)
