"""Dense tensors, differentiable primitives, and gradient verification."""

from .gradcheck import grad_check
from .ops import (
    LN_EPS,
    add,
    concat,
    cross_entropy,
    div,
    exp,
    gelu,
    getitem,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    mul,
    reshape,
    softmax_rows,
    sub,
    sum,
    swap_last,
    take,
    transpose,
)
from .rng import ALGORITHM, RngState, new_rng, truncated_normal
from .tensor import GradientMap, Tape, Tensor, as_tensor, backward

__all__ = [
    "ALGORITHM", "GradientMap", "LN_EPS", "RngState", "Tape", "Tensor", "add", "as_tensor",
    "backward", "concat", "cross_entropy", "div", "exp", "gelu", "getitem", "grad_check",
    "layer_norm", "linear", "log", "matmul", "mean", "mul", "new_rng", "reshape",
    "softmax_rows", "sub", "sum", "swap_last", "take", "transpose", "truncated_normal",
]
