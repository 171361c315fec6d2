"""Minimal reverse-mode differentiation for the CRN model family."""
from . import ops
from .checkpoint import load_arrays, save_arrays
from .conv import conv_freq, deconv_freq, depthwise_conv
from .optim import AdamState, adam_step
from .recurrent import convlstm_sequence, gru_sequence
from .tensor import NonFiniteError, Tensor, backward, constant, parameter, zero_grad

__all__ = [
    "AdamState",
    "NonFiniteError",
    "Tensor",
    "adam_step",
    "backward",
    "constant",
    "conv_freq",
    "convlstm_sequence",
    "deconv_freq",
    "depthwise_conv",
    "gru_sequence",
    "load_arrays",
    "ops",
    "parameter",
    "save_arrays",
    "zero_grad",
]
