"""Minimal dense tensors with reverse-mode gradients.

The numerical substrate for the whole package: a tape-building ``Tensor``,
named ``Parameter`` leaves, the forward/backward operations in
:mod:`~otpose.tensorlab.ops`, a finite-difference gradient checker, and an
allocation tracker used by the attention benchmark.
"""

from .tensor import (
    AllocationTracker,
    ConfigError,
    DEFAULT_DTYPE,
    DimensionError,
    GradCheckError,
    NonFiniteError,
    Parameter,
    Tensor,
    TensorLabError,
    grad_enabled,
    no_grad,
    track_allocations,
)
from .gradcheck import finite_diff_check
from . import ops

__all__ = [
    "AllocationTracker", "ConfigError", "DEFAULT_DTYPE", "DimensionError",
    "GradCheckError", "NonFiniteError", "Parameter", "Tensor",
    "TensorLabError", "grad_enabled", "no_grad", "track_allocations",
    "finite_diff_check", "ops",
]
