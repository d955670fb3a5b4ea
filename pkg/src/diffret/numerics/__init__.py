from .optim import Adam
from .rng import ALGORITHM, SeededRng, gaussian
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    amax,
    as_tensor,
    backward,
    broadcast_to,
    clip,
    concat,
    div,
    exp,
    expand_dims,
    getitem,
    l2_normalize,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    softmax,
    sqrt,
    square,
    sub,
    swapaxes,
    tanh,
    tsum,
)

__all__ = [
    "ALGORITHM", "Adam", "SeededRng", "Tape", "Tensor", "active_tape", "add", "amax",
    "as_tensor", "backward", "broadcast_to", "clip", "concat", "div", "exp", "expand_dims",
    "gaussian", "getitem", "l2_normalize", "log", "log_softmax", "matmul", "mean", "mul",
    "neg", "relu", "reshape", "softmax", "sqrt", "square", "sub", "swapaxes", "tanh", "tsum",
]
