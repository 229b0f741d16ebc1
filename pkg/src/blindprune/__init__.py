"""Activation-statistics pruning for small fully connected networks."""

from .errors import BlindPruneError, ConfigError, FormatError, InputError, ShapeError
from .numerics import Activation, BlindRange, activation_apply, activation_grad, blind_range, matmul

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "BlindPruneError",
    "BlindRange",
    "ConfigError",
    "FormatError",
    "InputError",
    "ShapeError",
    "activation_apply",
    "activation_grad",
    "blind_range",
    "matmul",
]
