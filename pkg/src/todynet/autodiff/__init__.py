from . import ops
from .gradcheck import finite_difference_check
from .ops import (
    REGISTERED_OPS,
    BatchNormState,
    add,
    conv1d_same,
    conv2d_valid,
    matmul,
    mul_scalar,
    relu,
    softmax_cross_entropy,
)
from .optim import Adam, adam_step
from .tensor import Parameter, Tape, TapeNode, Tensor, backward, get_tape, no_grad, reset_tape

__all__ = [
    "ops",
    "REGISTERED_OPS",
    "Adam",
    "BatchNormState",
    "Parameter",
    "Tape",
    "TapeNode",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "conv1d_same",
    "conv2d_valid",
    "finite_difference_check",
    "get_tape",
    "matmul",
    "mul_scalar",
    "no_grad",
    "relu",
    "reset_tape",
    "softmax_cross_entropy",
]
