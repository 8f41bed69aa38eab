"""Disentanglement benchmark: VAE objectives, ground-truth data and scoring."""

from .errors import (CollapsedRepresentationError, ConfigurationError, DisbenchError, FitError,
                     InputError, NonFiniteError, ParseError, UsageError)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CollapsedRepresentationError",
    "ConfigurationError",
    "DisbenchError",
    "FitError",
    "InputError",
    "NonFiniteError",
    "ParseError",
    "UsageError",
]
