"""Cascaded Dual Vision Transformer facial-landmark detection on a numpy autograd core."""

from .cascade import Cascade, build_model
from .config import CascadeConfig, ConfigError, preset
from .numerics import Tensor, grad_check, no_grad

__all__ = ["Cascade", "CascadeConfig", "ConfigError", "Tensor", "build_model", "grad_check", "no_grad", "preset"]
__version__ = "0.1.0"
