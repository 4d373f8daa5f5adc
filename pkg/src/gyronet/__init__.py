"""Poincare ResNets on numpy: gyrovector primitives with hand-derived gradients."""

from . import engine, gyro, layers, models, ops, verify
from .engine import Tape, Tensor, naive_mode
from .errors import (
    ContractError, ConvergenceError, FormatError, NonFiniteError, OracleError, TapeError,
)
from .models import ArchSpec, InitScheme, Model, build_model, forward

__version__ = "0.1.0"

__all__ = [
    "ArchSpec", "ContractError", "ConvergenceError", "FormatError", "InitScheme", "Model",
    "NonFiniteError", "OracleError", "Tape", "TapeError", "Tensor", "build_model", "engine",
    "forward", "gyro", "layers", "models", "naive_mode", "ops", "verify",
]
