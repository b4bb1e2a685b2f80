"""INI run configuration: parse, validate hard, echo back resolved.

Sections [model], [augment], [loss], [train] map onto the dataclasses
owned by the corresponding modules. Unknown sections or keys are errors;
the tunable namespace is dense enough that a tolerated typo would
silently change the experiment. Every value has a default, so an empty
file is a valid config.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .augment import STUDENT_VIEW_COUNT, AugmentConfig
from .errors import ConfigError, ParameterError
from .losses import LossWeights
from .network import ModelConfig
from .trainer import TrainConfig


def _boolean(raw):
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _int_tuple(raw):
    return tuple(int(part.strip()) for part in raw.split(","))


_SCHEMA = {
    "model": {
        "input_size": int,
        "channels": _int_tuple,
        "dim": int,
        "attention_heads": int,
        "n_semantic": int,
        "n_auxiliary": int,
        "n_instance": int,
        "tau": float,
        "prior_mu": float,
        "prior_sigma": float,
        "use_prior": _boolean,
        "threshold": float,
        "relation_dim": int,
    },
    "augment": {
        "crop_prob": float,
        "crop_min_area": float,
        "zoom_prob": float,
        "zoom_max_factor": float,
        "flip_prob": float,
        "photometric_prob": float,
        "teacher_jitter": float,
        "blur_sigma_min": float,
        "blur_sigma_max": float,
        "mask_rect_min": int,
        "mask_rect_max": int,
        "mask_area_budget": float,
        "student_jitter": float,
        "student_views": int,
    },
    "loss": {
        "semantic": float,
        "instance": float,
        "hierarchical": float,
        "sparsity": float,
        "diversity": float,
    },
    "train": {
        "steps": int,
        "batch_size": int,
        "seed": int,
        "optimizer": str,
        "lr": float,
        "lr_floor_ratio": float,
        "beta1": float,
        "beta2": float,
        "adam_eps": float,
        "sgd_momentum": float,
        "ema_momentum": float,
        "ema_final": float,
        "log_interval": int,
        "checkpoint_interval": int,
    },
}


@dataclass
class RunConfig:
    model: ModelConfig
    augment: AugmentConfig
    weights: LossWeights
    train: TrainConfig


def _validate_model(model):
    # ModelConfig itself is a passive record; reject bad combinations
    # here, before any arrays get allocated.
    if len(model.channels) != 3:
        raise ConfigError(f"channels needs 3 entries, got {model.channels}")
    model.encoder_config()
    if model.tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {model.tau}")
    if model.prior_sigma <= 0.0:
        raise ConfigError(f"prior_sigma must be positive, got {model.prior_sigma}")
    if not 0.0 <= model.threshold <= 1.0:
        raise ConfigError(f"threshold must lie in [0, 1], got {model.threshold}")
    if model.n_semantic < 1 or model.n_instance < 1:
        raise ConfigError("need at least one semantic and one instance prototype")
    if model.n_auxiliary < 0 or model.relation_dim < 0:
        raise ConfigError("n_auxiliary and relation_dim must be nonnegative")


def parse_run_config(text):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {section: {} for section in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            converter = _SCHEMA[section].get(key)
            if converter is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                values[section][key] = converter(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from None
    views = values["augment"].pop("student_views", STUDENT_VIEW_COUNT)
    if views != STUDENT_VIEW_COUNT:
        raise ConfigError(
            f"student_views is fixed at {STUDENT_VIEW_COUNT}, got {views}"
        )
    try:
        config = RunConfig(
            model=ModelConfig(**values["model"]),
            augment=AugmentConfig(**values["augment"]),
            weights=LossWeights(**values["loss"]),
            train=TrainConfig(**values["train"]),
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    _validate_model(config.model)
    return config


def load_run_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_run_config(text)


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolved_text(config):
    """Render every effective value, defaults included, as INI text."""
    sources = {
        "model": config.model,
        "augment": config.augment,
        "loss": config.weights,
        "train": config.train,
    }
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            if key == "student_views":
                value = STUDENT_VIEW_COUNT
            else:
                value = getattr(sources[section], key)
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def write_resolved(config, path):
    Path(path).write_text(resolved_text(config), encoding="utf-8")
