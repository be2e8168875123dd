from .checkpoint import dump_checkpoint, load_checkpoint, load_checkpoint_bytes, restore_into, save_checkpoint
from .gradcheck import GradCheckResult, check_gradients, numerical_gradient
from .ops import (
    add,
    broadcast_to,
    clip,
    concat,
    conv1d_depthwise,
    cos,
    elementwise,
    exp,
    log,
    matmul,
    maxpool_over_length,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    sin,
    softmax_masked,
    stack,
    stop_gradient,
    sub,
    sum,
    take_rows,
    transpose,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "Adam", "AdamState", "GradCheckResult", "Tensor", "adam_step", "add", "as_tensor", "backward",
    "broadcast_to", "check_gradients", "clip", "concat", "conv1d_depthwise", "cos", "dump_checkpoint",
    "elementwise", "exp", "is_grad_enabled", "load_checkpoint", "load_checkpoint_bytes", "log", "matmul",
    "maxpool_over_length", "mean", "mul", "no_grad", "numerical_gradient", "relu", "reshape",
    "restore_into", "save_checkpoint", "scale", "sigmoid", "sin", "softmax_masked", "stack",
    "stop_gradient", "sub", "sum", "take_rows", "transpose",
]
