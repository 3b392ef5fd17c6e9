"""Minimal differentiable-computation core."""

from .functional import (
    adaptive_avg_pool2d,
    batchnorm,
    conv2d,
    conv_transpose2d,
    leaky_relu,
    linear,
    lstm_step,
)
from .gradcheck import GradCheckReport, check_gradients, gradients
from .layers import (
    LSTM,
    BatchNorm,
    BatchNormSpec,
    Conv2d,
    Conv2dSpec,
    ConvTranspose2d,
    Linear,
    LSTMSpec,
    Module,
)
from .tensor import Parameter, Tensor, concat, no_grad, stack

__all__ = [
    "Tensor",
    "Parameter",
    "concat",
    "stack",
    "no_grad",
    "conv2d",
    "conv_transpose2d",
    "leaky_relu",
    "batchnorm",
    "linear",
    "lstm_step",
    "adaptive_avg_pool2d",
    "Module",
    "Conv2d",
    "Conv2dSpec",
    "ConvTranspose2d",
    "BatchNorm",
    "BatchNormSpec",
    "Linear",
    "LSTM",
    "LSTMSpec",
    "gradients",
    "check_gradients",
    "GradCheckReport",
]
