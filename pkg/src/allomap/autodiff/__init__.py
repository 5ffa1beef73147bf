"""Minimal dense-tensor numeric core with reverse-mode differentiation."""

from .tensor import (
    ShapeMismatch,
    dtype,
    precision,
    TapeError,
    Tensor,
    active_tape,
    add,
    backward,
    concat,
    gather,
    matmul,
    mul,
    neg,
    no_grad,
    ones,
    relu,
    reset_tape,
    reshape,
    scale,
    scatter,
    sigmoid,
    sub,
    tanh,
    tensor,
    tmean,
    transpose,
    tsum,
    zeros,
)
from .nn import (
    VOID,
    Conv2d,
    GRUCell,
    LayerNorm,
    Linear,
    Module,
    bilinear_upsample,
    conv2d,
    gru_cell,
    layer_norm,
    masked_cross_entropy,
    softmax,
    uniform_init,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients

__all__ = [
    "ShapeMismatch", "dtype", "precision", "TapeError", "Tensor", "active_tape", "add", "backward",
    "concat", "gather", "matmul", "mul", "neg", "no_grad", "ones", "relu",
    "reset_tape", "reshape", "scale", "scatter", "sigmoid", "sub", "tanh",
    "tensor", "tmean", "transpose", "tsum", "zeros",
    "VOID", "Conv2d", "GRUCell", "LayerNorm", "Linear", "Module",
    "bilinear_upsample", "conv2d", "gru_cell", "layer_norm",
    "masked_cross_entropy", "softmax", "uniform_init",
    "load_checkpoint", "save_checkpoint", "check_gradients",
]
