from .adam import AdamState, adam_step
from .checkpoint import CheckpointError, load_params, save_params
from .engine import POOL, Tensor, parameter
from .ops import (
    ShapeError,
    conv2d,
    deconv2d,
    fully_connected,
    l2_reconstruction_loss,
    maxpool2,
    relu,
    softmax_accuracy,
    softmax_cross_entropy,
    unpool2,
)

__all__ = [
    "AdamState", "adam_step", "CheckpointError", "load_params", "save_params",
    "POOL", "Tensor", "parameter", "ShapeError", "conv2d", "deconv2d",
    "fully_connected", "l2_reconstruction_loss", "maxpool2", "relu",
    "softmax_accuracy", "softmax_cross_entropy", "unpool2",
]
