"""Single JSON config with dotted-path overrides.

Unknown keys are rejected at every level; every run echoes the fully
resolved configuration so experiments stay reproducible from logs alone.
"""

from __future__ import annotations

import dataclasses
import json

from .data.scene import DatasetParams
from .network import NetworkConfig, desk_config, paper_config
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _model_defaults():
    d = dataclasses.asdict(desk_config())
    d["preset"] = "desk"
    return d


def defaults() -> dict:
    return {
        "data": {
            "out": "data/train",
            "clips": 200,
            "seed": 0,
            "moving_objects": False,
            "width": 96,
            "height": 64,
        },
        "model": _model_defaults(),
        "train": dataclasses.asdict(TrainConfig()),
        "eval": {
            "dataset": "",
            "out_csv": "metrics.csv",
        },
    }


def _merge(base: dict, update: dict, path: str = ""):
    for key, val in update.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{here}: expected an object")
            _merge(base[key], val, here)
        else:
            base[key] = val


def apply_override(cfg: dict, spec: str):
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} is not of the form key.path=value")
    key, raw = spec.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config key: {key}")
        node = node[p]
    last = parts[-1]
    if not isinstance(node, dict) or last not in node:
        raise ConfigError(f"unknown config key: {key}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[last] = value


def load_config(path=None, overrides=()) -> dict:
    cfg = defaults()
    if path is not None:
        try:
            with open(path) as f:
                text = f.read()
            user = json.loads(text)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path}: line {e.lineno} column {e.colno}: {e.msg}")
        if not isinstance(user, dict):
            raise ConfigError(f"config {path}: top level must be an object")
        # a user-provided preset swaps the model defaults before merging
        preset = user.get("model", {}).get("preset")
        if preset is not None:
            cfg["model"] = _preset_dict(preset)
        _merge(cfg, user)
    for spec in overrides:
        apply_override(cfg, spec)
    return cfg


def _preset_dict(name: str) -> dict:
    if name == "desk":
        base = desk_config()
    elif name == "paper":
        base = paper_config()
    else:
        raise ConfigError(f"unknown model preset {name!r} (expected 'desk' or 'paper')")
    d = dataclasses.asdict(base)
    d["preset"] = name
    return d


def network_config_from(cfg: dict) -> NetworkConfig:
    model = dict(cfg["model"])
    model.pop("preset", None)
    tuple_fields = {"stage_depths", "stage_channels", "stage_heads", "st_heads",
                    "state_heads", "decoder_channels", "pose_channels", "targets"}
    kwargs = {k: tuple(v) if k in tuple_fields else v for k, v in model.items()}
    net = NetworkConfig(**kwargs)
    net.validate()
    return net


def train_config_from(cfg: dict) -> TrainConfig:
    tc = TrainConfig(**cfg["train"])
    if not tc.dataset:
        raise ConfigError("missing required key: train.dataset")
    return tc


def dataset_params_from(cfg: dict) -> DatasetParams:
    d = cfg["data"]
    return DatasetParams(width=int(d["width"]), height=int(d["height"]),
                         moving_objects=bool(d["moving_objects"]))


def echo(cfg: dict) -> str:
    return json.dumps(cfg, indent=1, sort_keys=True)
