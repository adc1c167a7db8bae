"""Dense float64 tensors, reverse-mode autodiff and Adam."""
from .gradcheck import check_gradients, numeric_grad, relative_error
from .kernels import BACKEND
from .optim import Adam, AdamState, TrainingError, adam_step
from .tensor import (
    DimensionError,
    DomainError,
    Tensor,
    add,
    as_tensor,
    backward,
    ceil_ratio,
    clamp_min,
    concat,
    div,
    dropout,
    elementwise,
    exp,
    getitem,
    index_select,
    log,
    matmul,
    mul,
    no_grad,
    reduce,
    reduce_max,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scatter_add,
    segment_max,
    segment_sum,
    sigmoid,
    softmax,
    sub,
    tanh,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
