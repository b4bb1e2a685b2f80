"""Self-supervised prototype grouping over synthetic scenes.

A from-scratch float64 autodiff engine drives a hybrid convolutional
pyramid encoder whose features are clustered by learned prototypes at
three scales (semantic, instance, relational grouping). Training is
student-teacher: the teacher is an exponential moving average of the
student and sees a different augmentation of each scene.
"""

from . import tensor
from .errors import (
    ConfigError,
    ContractError,
    CorruptCheckpointError,
    DegeneratePrototypeError,
    DistributionError,
    NonFiniteError,
    ParameterError,
    ShapeError,
)
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "tensor",
    "ConfigError",
    "ContractError",
    "CorruptCheckpointError",
    "DegeneratePrototypeError",
    "DistributionError",
    "NonFiniteError",
    "ParameterError",
    "ShapeError",
]
