"""Toy vision-language stack with context-aware logit ensembling."""

from . import backend
from .tensor import Tensor, parameter

__version__ = "0.1.0"

__all__ = ["Tensor", "parameter", "backend", "__version__"]
