"""Numeric core: tensors, differentiable ops and gradient checking."""

from fsdag.core.gradcheck import grad_check
from fsdag.core.tensor import ContractViolation
from fsdag.core.tensor import DimensionError
from fsdag.core.tensor import RankError
from fsdag.core.tensor import Tape
from fsdag.core.tensor import Tensor
from fsdag.core.tensor import backward

__all__ = [
    "ContractViolation",
    "DimensionError",
    "RankError",
    "Tape",
    "Tensor",
    "backward",
    "grad_check",
]
