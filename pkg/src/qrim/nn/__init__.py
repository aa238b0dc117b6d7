"""Minimal tensor/autodiff engine with the layer set of the denoising CNN."""
from .functional import (
    batch_norm,
    batchnorm_backward,
    batchnorm_forward,
    conv2d,
    conv2d_backward,
    conv2d_forward,
    mse_loss,
    mse_loss_backward,
    mse_loss_forward,
    relu,
    relu_backward,
    relu_forward,
    straight_through,
)
from .layers import ACTIVATIONS, BatchNorm2d, ConvLayer, Model, kaiming_uniform, model_forward
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor

__all__ = [
    "Tensor", "as_tensor",
    "conv2d", "batch_norm", "relu", "mse_loss", "straight_through",
    "conv2d_forward", "conv2d_backward", "batchnorm_forward", "batchnorm_backward",
    "relu_forward", "relu_backward", "mse_loss_forward", "mse_loss_backward",
    "ConvLayer", "BatchNorm2d", "Model", "model_forward", "kaiming_uniform", "ACTIVATIONS",
    "Adam", "AdamState", "adam_step",
]
