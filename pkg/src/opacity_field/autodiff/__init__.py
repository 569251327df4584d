from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn import Conv2d, Linear, Module, parameter
from .optim import Optimizer, optimizer_step
from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    add,
    avg_pool2x,
    backward,
    clip,
    concat,
    conv2d,
    cumsum,
    default_dtype,
    div,
    exp,
    get_default_dtype,
    get_tape,
    getitem,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softplus,
    sqrt,
    square,
    sub,
    sum_,
    tanh,
    tape_scope,
    tensor,
    transpose,
    upsample2x,
)

__all__ = [name for name in dir() if not name.startswith("_")]
