"""Dense numerics: autodiff tape, small MLPs, and the Adam optimizer."""

from .adam import AdamConfig, AdamOptimizer, AdamState, adam_step
from .autodiff import (
    Tensor,
    backward,
    finite_diff_gradient,
    flatten_arrays,
    gradient,
    no_grad,
    parameter,
    zero_grads,
)
from .mlp import LEAKY_SLOPE, Mlp, init_mlp, mlp_apply

__all__ = [
    "AdamConfig",
    "AdamOptimizer",
    "AdamState",
    "adam_step",
    "Tensor",
    "backward",
    "finite_diff_gradient",
    "flatten_arrays",
    "gradient",
    "no_grad",
    "parameter",
    "zero_grads",
    "LEAKY_SLOPE",
    "Mlp",
    "init_mlp",
    "mlp_apply",
]
