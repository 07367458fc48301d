"""Minimal reverse-mode differentiation over dense numpy arrays."""

from .checkpoint import FORMAT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, relative_error
from .ops import (
    add,
    bias_add,
    concat,
    conv2d,
    conv3d,
    dice_loss,
    downsample2,
    gather_rows,
    l1_loss,
    matmul,
    mean_over_axis,
    mul,
    relu,
    resample2d_bilinear,
    reshape,
    segment_sum,
    tanh,
    total,
    transposed_conv2d,
    upsample2,
)
from .optim import AdamState, adam_step, cosine_lr
from .tensor import Tensor

__all__ = [
    "FORMAT_VERSION",
    "AdamState",
    "CheckpointError",
    "Tensor",
    "adam_step",
    "add",
    "bias_add",
    "concat",
    "conv2d",
    "conv3d",
    "cosine_lr",
    "dice_loss",
    "downsample2",
    "gather_rows",
    "grad_check",
    "l1_loss",
    "load_checkpoint",
    "matmul",
    "mean_over_axis",
    "mul",
    "relative_error",
    "relu",
    "resample2d_bilinear",
    "reshape",
    "save_checkpoint",
    "segment_sum",
    "tanh",
    "total",
    "transposed_conv2d",
    "upsample2",
]
