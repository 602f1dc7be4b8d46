"""Minimal dense-tensor engine with reverse-mode differentiation."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import cosine_similarity, dropout, layer_norm, log_softmax, softmax
from .gradcheck import GradCheckReport, NondeterministicError, grad_check, numerical_gradient
from .module import MLP, Linear, Module, glorot
from .tensor import (
    ContractError,
    DimensionError,
    Parameter,
    Tensor,
    add,
    as_tensor,
    clip,
    concat,
    default_dtype,
    div,
    einsum,
    exp,
    get_default_dtype,
    getitem,
    is_grad_enabled,
    leaky_relu,
    log,
    matmul,
    maximum,
    mean,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    slice_,
    softplus,
    sqrt,
    stack,
    sub,
    sum_,
    tanh,
    transpose,
    where,
)

__all__ = [name for name in dir() if not name.startswith("_")]
