"""Reverse-mode differentiation, parameter storage and Adam."""

from . import autodiff
from .autodiff import Tensor, backward, check_numerics, set_check_numerics
from .gradcheck import grad_check
from .optim import Adam, adam_step
from .params import ParamStore

__all__ = [
    "Adam",
    "ParamStore",
    "Tensor",
    "adam_step",
    "autodiff",
    "backward",
    "check_numerics",
    "grad_check",
    "set_check_numerics",
]
