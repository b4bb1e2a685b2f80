"""Full model: pyramid encoder feeding the prototype grouping head.

The student and teacher are two instances built from the same seed, so
they start bitwise identical. Freezing the teacher turns its parameters
into plain constants; nothing downstream of them ever lands on a tape,
which is the stop-gradient the training objective needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, PyramidEncoder
from .errors import ConfigError
from .grouping import GroupingHead
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    channels: tuple = (32, 64, 128)
    dim: int = 32
    attention_heads: int = 4
    n_semantic: int = 16
    n_auxiliary: int = 4
    n_instance: int = 8
    tau: float = 0.1
    prior_mu: float = 0.5
    prior_sigma: float = 0.7
    use_prior: bool = True
    threshold: float = 0.5
    relation_dim: int = 0

    def encoder_config(self):
        return EncoderConfig(
            input_size=self.input_size,
            channels=tuple(self.channels),
            dim=self.dim,
            attention_heads=self.attention_heads,
        )


# relation_dim 0 means "use dim"; keeps the serialized form all-numeric.
def _resolved_relation_dim(config):
    return config.relation_dim if config.relation_dim else None


class GroupingNetwork:
    """Encoder plus grouping head, exposing one flat parameter dict."""

    def __init__(self, config, seed):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = PyramidEncoder(config.encoder_config(), rng)
        self.head = GroupingHead(
            rng,
            config.dim,
            n_semantic=config.n_semantic,
            n_auxiliary=config.n_auxiliary,
            n_instance=config.n_instance,
            tau=config.tau,
            prior_mu=config.prior_mu,
            prior_sigma=config.prior_sigma,
            use_prior=config.use_prior,
            threshold=config.threshold,
            relation_dim=_resolved_relation_dim(config),
            n_scales=3,
        )

    def __call__(self, image):
        """Image tensor (3, s, s) -> one AttentionSet per pyramid scale."""
        return self.head(self.encoder(image))

    def params(self):
        merged = {}
        for name, p in self.encoder.params().items():
            merged[f"encoder/{name}"] = p
        for name, p in self.head.params().items():
            merged[f"prototypes/{name}"] = p
        return merged

    def freeze(self):
        for p in self.params().values():
            p.requires_grad = False
            p.grad = None
        return self

    def load_arrays(self, arrays, prefix):
        """Copy ``prefix/name`` records into the matching parameters."""
        for name, p in self.params().items():
            key = f"{prefix}/{name}"
            if key not in arrays:
                raise ConfigError(f"checkpoint is missing record {key}")
            stored = arrays[key]
            if stored.shape != p.data.shape:
                raise ConfigError(
                    f"checkpoint record {key} has shape {stored.shape}, "
                    f"expected {p.data.shape}"
                )
            p.data[...] = stored

    def export_arrays(self, prefix):
        return {
            f"{prefix}/{name}": p.data.copy()
            for name, p in self.params().items()
        }


_CONFIG_FIELDS = (
    "input_size", "dim", "attention_heads", "n_semantic", "n_auxiliary",
    "n_instance", "tau", "prior_mu", "prior_sigma", "use_prior",
    "threshold", "relation_dim",
)
_INT_FIELDS = {
    "input_size", "dim", "attention_heads", "n_semantic", "n_auxiliary",
    "n_instance", "relation_dim",
}


def model_config_arrays(config):
    """Encode the model config as checkpoint records (all f64)."""
    arrays = {"config/channels": np.asarray(config.channels, dtype=np.float64)}
    for field in _CONFIG_FIELDS:
        arrays[f"config/{field}"] = np.asarray(
            [float(getattr(config, field))]
        )
    return arrays


def model_config_from_arrays(arrays):
    """Rebuild a ModelConfig from checkpoint records."""
    try:
        kwargs = {"channels": tuple(int(c) for c in arrays["config/channels"])}
        for field in _CONFIG_FIELDS:
            value = float(arrays[f"config/{field}"][0])
            if field == "use_prior":
                kwargs[field] = bool(value)
            elif field in _INT_FIELDS:
                kwargs[field] = int(value)
            else:
                kwargs[field] = value
    except KeyError as missing:
        raise ConfigError(f"checkpoint has no {missing.args[0]} record") from None
    return ModelConfig(**kwargs)
