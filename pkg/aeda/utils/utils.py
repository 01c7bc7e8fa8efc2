import os
import json
import math
import random
import hashlib
from contextlib import contextmanager

import numpy as np
import torch
from omegaconf import OmegaConf


SAVE_DIR_ENV_VAR = "AEDA_SAVE_DIR"


def load_conf(path_to_yaml):
    """Wrapper for configuration file loading through OmegaConf."""
    conf = OmegaConf.load(path_to_yaml)
    if "env" in conf.keys():
        if conf.env.base_dir is None:
            OmegaConf.update(conf, "env.base_dir", get_root_dir())
        if os.environ.get(SAVE_DIR_ENV_VAR):
            OmegaConf.update(conf, "env.save_dir", os.environ[SAVE_DIR_ENV_VAR])
    return conf


def merge_conf(base_conf_path, dataset_conf_path, model_conf_path):
    """Wrapper for to merge multiple config files through OmegaConf."""
    base_conf = load_conf(base_conf_path)
    dataset_conf = load_conf(dataset_conf_path)
    model_conf = load_conf(model_conf_path)

    conf = OmegaConf.merge(base_conf, dataset_conf, model_conf)
    return conf


def default_conf():
    root = get_root_dir()
    return merge_conf(
        os.path.join(root, "configs", "training.yaml"),
        os.path.join(root, "configs", "datasets", "cmnist.yaml"),
        os.path.join(root, "configs", "models", "composite.yaml"),
    )


def fix_seed(seed):
    os.environ["PYTHONHASHSEED"] = str(seed)
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    torch.backends.cudnn.benchmark = False


def make_generator(seed):
    return torch.Generator().manual_seed(int(seed))


@contextmanager
def seeded_init(seed):
    """Draw module initialisations from ``seed`` without touching the global RNG stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        yield


def _coerce_cli_value(value):
    if isinstance(value, str) and value.lower() in ["true", "false"]:
        return value.lower() == "true"
    return value


def update_conf_with_cli_params(params, config):
    """Overwrite config keys with non-null CLI params, searching one level deep.

    A dotted param name (``training.seed``) addresses exactly one key.
    """
    params_dict = vars(params)
    for param in params_dict:
        if params_dict[param] is None:
            continue
        new_param = _coerce_cli_value(params_dict[param])
        if "." in param:
            OmegaConf.update(config, param, new_param)
            continue
        if param in config.keys():
            OmegaConf.update(config, param, new_param)
            continue
        for top_level_key in config.keys():
            section = config[top_level_key]
            if OmegaConf.is_dict(section) and param in section.keys():
                OmegaConf.update(config, "{}.{}".format(top_level_key, param), new_param)


def save_json(output_path, content):
    with open(output_path, "w") as outfile:
        json.dump(content, outfile, indent=2, sort_keys=True)


def load_json(path):
    with open(path) as infile:
        return json.load(infile)


def get_root_dir():
    root = os.path.dirname(os.path.abspath(__file__))
    root = os.path.abspath(os.path.join(root, "../.."))
    return root


def round_half_up(x):
    # tolerance absorbs float error in ratios such as 50 * 0.2 / 0.8
    return int(math.floor(x + 0.5 + 1e-9))


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def state_sha256(state):
    """Hash a module's (or a state dict's) tensors in key order."""
    if isinstance(state, torch.nn.Module):
        state = state.state_dict()
    digest = hashlib.sha256()
    for key, tensor in state.items():
        digest.update(key.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def config_hash(config, exclude=("env",)):
    """SHA-256 of every section but ``exclude``; the experiment id never counts."""
    container = {
        key: OmegaConf.to_container(config[key], resolve=False)
        if OmegaConf.is_config(config[key])
        else config[key]
        for key in config.keys()
        if key not in exclude
    }
    if isinstance(container.get("training"), dict):
        container["training"].pop("experiment_id", None)
    return hashlib.sha256(
        json.dumps(container, sort_keys=True).encode("utf-8")
    ).hexdigest()


def dataset_hash(config):
    section = OmegaConf.to_container(config.dataset_config, resolve=False)
    # data_dir depends on env; the build is identified by the remaining keys
    section.pop("data_dir", None)
    return hashlib.sha256(json.dumps(section, sort_keys=True).encode("utf-8")).hexdigest()
