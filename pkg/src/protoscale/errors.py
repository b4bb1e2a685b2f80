"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ParameterError(ValueError):
    """A numeric hyperparameter is outside its valid range."""


class ContractError(RuntimeError):
    """A caller violated an API contract (non-scalar backward, missing grads, ...)."""


class DistributionError(ValueError):
    """An input that must be a probability distribution is not one."""


class DegeneratePrototypeError(ValueError):
    """A prototype row has zero norm and cannot be direction-compared."""


class ConfigError(ValueError):
    """A run configuration is malformed or internally inconsistent."""


class NonFiniteError(ArithmeticError):
    """A NaN or Inf appeared where a finite value is required."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class CorruptCheckpointError(ValueError):
    """A checkpoint file failed its magic, version, or CRC validation."""
