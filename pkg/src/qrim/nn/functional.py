"""Numpy kernels for the CNN layer set and their autodiff wrappers.

Kernels come in ``*_forward`` / ``*_backward`` pairs working on plain arrays
in ``(batch, channels, rows, cols)`` layout.  The lower-case wrappers
(``conv2d``, ``batch_norm``, ...) plug them into :mod:`qrim.nn.tensor`.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, ShapeError, UsageError
from .tensor import Tensor, as_tensor, make_node

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "batchnorm_forward",
    "batchnorm_backward",
    "relu_forward",
    "relu_backward",
    "mse_loss_forward",
    "mse_loss_backward",
    "conv2d",
    "batch_norm",
    "relu",
    "mse_loss",
    "straight_through",
]


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    B, C, H, W = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # B, C, H, W, k, k
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * k * k)


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None):
    """Stride-1 convolution with zero 'same' padding.

    Returns ``(y, cache)``; the cache holds the unfolded input needed by
    :func:`conv2d_backward`.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-D input, got shape {x.shape}")
    O, C, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernels must be square with odd size, got {kh}x{kw}")
    if x.shape[1] != C:
        raise ShapeError(f"input has {x.shape[1]} channels but the layer expects {C}")
    B, _, H, W = x.shape
    cols = _im2col(x, kh)
    y = cols @ weight.reshape(O, -1).T
    if bias is not None:
        y += bias
    y = np.ascontiguousarray(y.reshape(B, H, W, O).transpose(0, 3, 1, 2))
    return y, {"cols": cols, "x_shape": x.shape}


def conv2d_backward(grad: np.ndarray, cache: dict | None, weight: np.ndarray):
    """Gradients ``(d_input, d_weight, d_bias)`` of :func:`conv2d_forward`."""
    if cache is None:
        raise UsageError("conv2d_backward called without a forward cache")
    O = weight.shape[0]
    g2 = grad.transpose(0, 2, 3, 1).reshape(-1, O)
    d_weight = (g2.T @ cache["cols"]).reshape(weight.shape)
    d_bias = g2.sum(axis=0)
    flipped = np.ascontiguousarray(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    d_input, _ = conv2d_forward(grad, flipped)
    return d_input, d_weight, d_bias


def batchnorm_forward(x, gamma, beta, running_mean, running_var, *, training: bool,
                      momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel batch normalisation over (batch, rows, cols).

    In training mode the running statistics are updated in place
    (``running = (1 - momentum) * running + momentum * batch``, unbiased
    variance).  Returns ``(y, cache)``.
    """
    shape = (1, -1, 1, 1)
    if training:
        if x.shape[0] < 2:
            raise ConfigurationError("batch norm in training mode needs a batch of at least 2")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        n = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * n / (n - 1)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return y, {"xhat": xhat, "inv_std": inv_std, "gamma": gamma, "training": training}


def batchnorm_backward(grad, cache):
    """Returns ``(d_input, d_gamma, d_beta)``."""
    shape = (1, -1, 1, 1)
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    d_gamma = (grad * xhat).sum(axis=(0, 2, 3))
    d_beta = grad.sum(axis=(0, 2, 3))
    dxhat = grad * gamma.reshape(shape)
    if not cache["training"]:
        return dxhat * inv_std.reshape(shape), d_gamma, d_beta
    n = grad.size // grad.shape[1]
    d_input = (inv_std.reshape(shape) / n) * (
        n * dxhat
        - dxhat.sum(axis=(0, 2, 3)).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
    )
    return d_input, d_gamma, d_beta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(grad, mask):
    return grad * mask


def mse_loss_forward(pred, target) -> float:
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    d = pred - target
    return float(np.mean(d * d))


def mse_loss_backward(pred, target):
    return 2.0 * (pred - target) / pred.size


# autodiff wrappers

def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    x = as_tensor(x)
    y, cache = conv2d_forward(x.data, weight.data, None if bias is None else bias.data)

    def backward(g):
        dx, dw, db = conv2d_backward(g, cache, weight.data)
        return (dx, dw) + ((db,) if bias is not None else ())

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return make_node(y, parents, backward, "conv2d")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var, *,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    y, cache = batchnorm_forward(x.data, gamma.data, beta.data, running_mean, running_var,
                                 training=training, momentum=momentum, eps=eps)
    return make_node(y, (x, gamma, beta), lambda g: batchnorm_backward(g, cache), "batch_norm")


def relu(x: Tensor) -> Tensor:
    y, mask = relu_forward(x.data)
    return make_node(y, (x,), lambda g: (relu_backward(g, mask),), "relu")


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    value = np.asarray(mse_loss_forward(pred.data, target), dtype=pred.dtype)
    return make_node(value, (pred,), lambda g: (g * mse_loss_backward(pred.data, target),), "mse")


def straight_through(x: Tensor, forward_value: np.ndarray, surrogate_grad: np.ndarray | None = None,
                     name: str = "ste") -> Tensor:
    """Forward ``forward_value``; backward multiplies by ``surrogate_grad`` (identity when None)."""
    if surrogate_grad is None:
        return make_node(forward_value, (x,), lambda g: (g,), name)
    return make_node(forward_value, (x,), lambda g: (g * surrogate_grad,), name)
