"""Experiment configuration: YAML file + dotted key=value overrides.

One file drives every pipeline command, with per-command sections. Unknown
keys are rejected up front so a typo fails before any work starts; value
validation itself lives in the dataclasses each section populates.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

from .errors import ConfigError
from .losses import LossConfig
from .model import UNetSpec
from .synth import SynthConfig
from .train import AugmentConfig, OptimizerConfig, TrainConfig

DATA_ROOT_ENV = "KDSEG_DATA_ROOT"

DEFAULTS: dict = {
    "data_root": None,  # resolved against env/output when unset
    "manifest": None,  # default: <data_root>/manifest.json
    "seed": 0,
    "synth": {
        "count": 24,
        "size": 64,
        "nuclei_min": 5,
        "nuclei_max": 10,
        "channels": 3,
        "fractions": [0.72, 0.08, 0.20],
        "unlabeled_splits": ["train", "val"],
        "noise_sigma": 0.05,
    },
    "teacher": {
        "kind": "corruptor",  # "corruptor" | "files"
        "directory": None,  # files: where outputs live; corruptor: truth dir
        "mode": "instance",  # files only: "instance" | "probability"
        "threshold": 0.5,
        "drop_fraction": 0.3,
    },
    "model": {
        "depth": 4,
        "base_channels": 16,
        "in_channels": 3,
    },
    "loss": {
        "w_bce": 0.4,
        "w_tversky": 0.6,
        "alpha": 0.2,
        "beta": 0.8,
        "smooth_eps": 1e-6,
        "lambda_consistency": 0.1,
        "prob_clip_eps": 1e-7,
    },
    "optimizer": {
        "learning_rate": 0.001,
        "rho": 0.9,
        "epsilon": 1e-7,
        "lr_decay": 1.0,
    },
    "train": {
        "epochs": 25,
        "steps_per_epoch": 4,  # null = one full pass per epoch
        "batch_size": 8,
        "validation_interval": 1,
        "augment_enabled": True,
    },
    "augment": {
        "transforms": ["horizontal_split", "vertical_split"],
        "p_identity": 0.5,
    },
    "predict": {
        "split": "test",
        "checkpoint": None,  # default: <output>/checkpoints/best.pt
    },
    "evaluate": {
        "threshold": 0.5,
        "split": "test",
        "predictions": None,  # default: <output>/predictions
        "overlays": False,
    },
}


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"{here!r} must be a mapping")
            out[key] = _merge(defaults[key], value, here)
        else:
            out[key] = value
    return out


def _set_dotted(cfg: dict, dotted: str, raw_value: str) -> None:
    keys = dotted.split(".")
    here = cfg
    for key in keys[:-1]:
        if not isinstance(here.get(key), dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        here = here[key]
    if keys[-1] not in here:
        raise ConfigError(f"unknown config key {dotted!r}")
    here[keys[-1]] = yaml.safe_load(raw_value)


def load_config(
    path: str | Path | None = None,
    overrides: tuple[str, ...] = (),
    seed: int | None = None,
    env: dict | None = None,
) -> dict:
    """Defaults <- config file <- --set overrides <- --seed, validated keys."""
    env = os.environ if env is None else env
    user: dict = {}
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        user = loaded
    cfg = _merge(DEFAULTS, user)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        dotted, raw = item.split("=", 1)
        _set_dotted(cfg, dotted.strip(), raw)
    if seed is not None:
        cfg["seed"] = seed
    if cfg["data_root"] is None and env.get(DATA_ROOT_ENV):
        cfg["data_root"] = env[DATA_ROOT_ENV]
    return cfg


def make_synth_config(cfg: dict) -> SynthConfig:
    s = cfg["synth"]
    return SynthConfig(
        count=s["count"],
        size=s["size"],
        nuclei_min=s["nuclei_min"],
        nuclei_max=s["nuclei_max"],
        seed=cfg["seed"],
        channels=s["channels"],
        fractions=tuple(s["fractions"]),
        unlabeled_splits=tuple(s["unlabeled_splits"]),
        noise_sigma=s["noise_sigma"],
    )


def make_unet_spec(cfg: dict) -> UNetSpec:
    m = cfg["model"]
    return UNetSpec(
        depth=m["depth"],
        base_channels=m["base_channels"],
        in_channels=m["in_channels"],
    )


def make_loss_config(cfg: dict) -> LossConfig:
    return LossConfig(**cfg["loss"])


def make_train_config(cfg: dict, checkpoint_dir: str | Path | None = None) -> TrainConfig:
    t = cfg["train"]
    a = cfg["augment"]
    return TrainConfig(
        epochs=t["epochs"],
        steps_per_epoch=t["steps_per_epoch"],
        batch_size=t["batch_size"],
        seed=cfg["seed"],
        validation_interval=t["validation_interval"],
        loss=make_loss_config(cfg),
        optimizer=OptimizerConfig(**cfg["optimizer"]),
        augment=AugmentConfig(
            transforms=tuple(a["transforms"]), p_identity=a["p_identity"]
        ),
        augment_enabled=t["augment_enabled"],
        checkpoint_dir=checkpoint_dir,
    )
