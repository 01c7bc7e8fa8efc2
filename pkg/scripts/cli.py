import argparse
import os
import sys

from aeda.attacks.ifgsm import AttackConfig
from aeda.datasets import build_datasets, group_stats
from aeda.models.composite import CompositeClassifier
from aeda.tasks.evaluation import Evaluation
from aeda.tasks.experiment import run_experiment
from aeda.tasks.reporting import PLOT_KINDS, compare_runs, emit_plot_data
from aeda.trainers import METHODS, TrainConfig, run_switch_experiments
from aeda.utils.errors import ConfigError, ExperimentStageError
from aeda.utils.logger import Logger
from aeda.utils.utils import (
    dataset_hash,
    get_root_dir,
    load_conf,
    merge_conf,
    save_json,
    update_conf_with_cli_params,
)


def add_config_args(parser):
    parser.add_argument(
        "--config_path",
        type=str,
        help="path to base config file",
        default=os.path.join(get_root_dir(), "configs", "training.yaml"),
    )
    parser.add_argument("--dataset_config_path", type=str, default=None)
    parser.add_argument("--model_config_path", type=str, default=None)
    parser.add_argument(
        "--experiment_id",
        type=str,
        help="experiment id under which the run is saved",
        default=None,
    )
    parser.add_argument("--method", type=str, choices=METHODS, default=None)
    parser.add_argument("--epochs", dest="training.epochs", type=int, default=None)
    parser.add_argument("--seed", dest="training.seed", type=int, help="training seed", default=None)
    parser.add_argument("--dataset_seed", dest="dataset_config.seed", type=int, default=None)
    parser.add_argument("--device", type=str, default=None)
    parser.add_argument("--corpus", type=str, choices=["mnist", "synthetic", "npz"], default=None)
    parser.add_argument("--skew", type=float, help="fraction of b=1 in the second half of the classes", default=None)
    parser.add_argument("--backbone", type=str, choices=["tiny", "small_cnn", "vgg16"], default=None)
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--online_cutoff_epoch", type=int, default=None)
    parser.add_argument("--reversal_strength", type=float, default=None)
    parser.add_argument("--robust_label_mode", type=str, choices=["original", "attacked"], default=None)
    parser.add_argument("--aeda_pre_init", type=str, choices=["scratch", "finetune"], default=None)
    parser.add_argument("--epsilon", type=float, default=None)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--lam", type=float, default=None)
    parser.add_argument(
        "--success_rule",
        dest="attack.success_rule",
        type=str,
        choices=["keep-all", "require-bias-flip"],
        default=None,
    )
    parser.add_argument("--probe_epochs", type=int, default=None)


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        description="Adversarial-example data augmentation for visual debiasing"
    )
    parser.add_argument("--device_num", type=str, default=None)
    subparsers = parser.add_subparsers(dest="command", required=True)

    build = subparsers.add_parser("build-dataset", help="build and save the train/test splits")
    add_config_args(build)
    build.add_argument("--out_dir", type=str, default=None)

    train = subparsers.add_parser("train", help="run one experiment")
    add_config_args(train)

    for name, text in [("evaluate", "re-score a saved run"), ("probe", "transferability probe of a saved run")]:
        sub = subparsers.add_parser(name, help=text)
        sub.add_argument("run_dir", type=str)
        sub.add_argument("--checkpoint", type=str, default="checkpoint.pth.tar")
        sub.add_argument("--run_device", type=str, default="cpu")

    switch = subparsers.add_parser("switch-experiments", help="hard / ADV / robust label switch")
    add_config_args(switch)

    compare = subparsers.add_parser("compare", help="method comparison table")
    compare.add_argument("run_dirs", nargs="+")
    compare.add_argument("--out", type=str, default=None)

    plots = subparsers.add_parser("emit-plots", help="tabular plot data")
    plots.add_argument("run_dirs", nargs="+")
    plots.add_argument("--kind", type=str, choices=list(PLOT_KINDS) + ["all"], default="all")
    plots.add_argument("--out_dir", type=str, required=True)

    return parser.parse_args(argv)


def load_config(params):
    base_conf = load_conf(params.config_path)
    dataset_conf_path = params.dataset_config_path or os.path.join(
        base_conf.env.base_dir, "configs", "datasets", "cmnist.yaml"
    )
    model_conf_path = params.model_config_path or os.path.join(
        base_conf.env.base_dir, CompositeClassifier.config_path()
    )
    config = merge_conf(params.config_path, dataset_conf_path, model_conf_path)
    update_conf_with_cli_params(params, config)
    return config


def build_dataset_command(params):
    config = load_config(params)
    logger = Logger.console()
    train, test = build_datasets(config.dataset_config, logger)
    out_dir = params.out_dir or os.path.join(
        config.env.save_dir, "datasets", dataset_hash(config)[:12]
    )
    train.save(out_dir, "train")
    test.save(out_dir, "test")
    stats = group_stats(train)
    logger.write("Saved {} train / {} test examples to {}".format(len(train), len(test), out_dir))
    logger.write("Train bias ratio per class: {}".format(stats.bias_ratio))
    return 0


def train_command(params):
    config = load_config(params)
    logger = Logger(config)
    try:
        result = run_experiment(config, logger)
    except ExperimentStageError as err:
        logger.warn(str(err))
        return 1
    return result.exit_code


def evaluate_command(params):
    evaluation = Evaluation(params.run_dir, params.run_device, params.checkpoint)
    report = evaluation.evaluate()
    save_json(os.path.join(params.run_dir, "evaluation.json"), report.to_dict())
    return 0


def probe_command(params):
    evaluation = Evaluation(params.run_dir, params.run_device, params.checkpoint)
    r = evaluation.probe()
    if r is None:
        print("No adversarial examples saved with this run; probe undefined")
    else:
        print("r = {:.2f}".format(r))
    return 0


def switch_attack_config(config, params):
    """Attack settings of the switch experiments; --success_rule wins over switch.success_rule."""
    success_rule = getattr(params, "attack.success_rule", None) or config.switch.success_rule
    return AttackConfig.from_conf(config.attack, success_rule=success_rule)


def switch_command(params):
    config = load_config(params)
    logger = Logger(config)
    logger.save_config()
    train, test = build_datasets(config.dataset_config, logger)
    table = run_switch_experiments(
        train,
        test,
        config.model_config,
        TrainConfig.from_conf(config.training),
        switch_attack_config(config, params),
        epochs=config.switch.epochs,
        logger=logger,
    )
    table.to_frame().to_csv(logger.path("switch_table.tsv"), sep="\t", index=False, na_rep="NA")
    logger.write("Ordering robust > ADV > hard holds: {}".format(table.ordering_holds()))
    return 0


def compare_command(params):
    comparison = compare_runs(params.run_dirs, params.out)
    print(comparison.table.to_string(index=False))
    for name, holds in comparison.orderings.items():
        print("{}: {}".format(name, "n/a" if holds is None else holds))
    return 0


def emit_plots_command(params):
    kinds = PLOT_KINDS if params.kind == "all" else [params.kind]
    for kind in kinds:
        data = emit_plot_data(params.run_dirs, kind, params.out_dir)
        for note in data.notes:
            print("{}: {}".format(kind, note))
    return 0


COMMANDS = {
    "build-dataset": build_dataset_command,
    "train": train_command,
    "evaluate": evaluate_command,
    "probe": probe_command,
    "switch-experiments": switch_command,
    "compare": compare_command,
    "emit-plots": emit_plots_command,
}


def main(argv=None):
    params = parse_args(argv)
    if params.device_num is not None:
        os.environ["CUDA_VISIBLE_DEVICES"] = params.device_num
    try:
        return COMMANDS[params.command](params)
    except ConfigError as err:
        print("Configuration error: {}".format(err), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
