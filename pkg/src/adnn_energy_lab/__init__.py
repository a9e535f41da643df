"""Desk-scale energy-robustness test bench for input-adaptive networks."""

__version__ = "0.1.0"

from .autodiff import Tensor, gradients
from .base import NotFittedError

__all__ = ["Tensor", "gradients", "NotFittedError", "__version__"]
