"""Conv composite layers and the sequential denoising model."""
from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import ConfigurationError
from . import functional as F
from .tensor import Tensor

__all__ = ["BatchNorm2d", "ConvLayer", "Model", "kaiming_uniform", "model_forward", "ACTIVATIONS"]

ACTIVATIONS = ("relu", "linear", "sign", "integer")


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], gain: float, dtype=np.float64) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class BatchNorm2d:
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True, name="bn.gamma")
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True, name="bn.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            training=training, momentum=self.momentum, eps=self.eps)

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


class ConvLayer:
    """Conv -> optional BN -> activation.

    ``weight_quantizer`` maps the real-valued weight tensor to the weights used
    in the forward pass; ``act_quantizer`` implements the ``sign`` and
    ``integer`` activations.  Both are supplied by :mod:`qrim.qat`.  For the
    ``integer`` activation the pre-activation passes a ReLU before quantisation.
    """

    def __init__(self, c_in: int, c_out: int, *, activation: str = "relu", batch_norm: bool = True,
                 kernel_size: int = 3, rng: np.random.Generator | None = None, dtype=np.float64,
                 weight_quantizer: Callable[[Tensor], Tensor] | None = None,
                 act_quantizer=None):
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        if activation in ("sign", "integer") and act_quantizer is None:
            raise ConfigurationError(f"activation {activation!r} needs an activation quantizer")
        rng = rng if rng is not None else np.random.default_rng(0)
        gain = np.sqrt(2.0) if activation == "relu" else 1.0
        shape = (c_out, c_in, kernel_size, kernel_size)
        self.weight = Tensor(kaiming_uniform(rng, shape, gain, dtype), requires_grad=True, name="conv.weight")
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True, name="conv.bias")
        self.bn = BatchNorm2d(c_out, dtype=dtype) if batch_norm else None
        self.activation = activation
        self.weight_quantizer = weight_quantizer
        self.act_quantizer = act_quantizer

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    def effective_weight(self) -> Tensor:
        return self.weight if self.weight_quantizer is None else self.weight_quantizer(self.weight)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        y = F.conv2d(x, self.effective_weight(), self.bias)
        if self.bn is not None:
            y = self.bn(y, training)
        if self.activation == "relu":
            return F.relu(y)
        if self.activation == "linear":
            return y
        if self.activation == "integer":
            y = F.relu(y)
        return self.act_quantizer(y, training)

    def parameters(self) -> list[Tensor]:
        params = [self.weight, self.bias]
        if self.bn is not None:
            params += self.bn.parameters()
        return params


class Model:
    """Sequence of :class:`ConvLayer` mapping 2 channels (re/im) to 2 channels."""

    def __init__(self, layers: Sequence[ConvLayer], input_quantizer=None, config=None):
        self.layers = list(layers)
        self.input_quantizer = input_quantizer
        self.config = config
        # (N, M) of the snapshots the model was trained on, when known
        self.input_shape: tuple[int, int] | None = None
        self.training = False
        self.validate()

    def validate(self) -> None:
        if not self.layers:
            raise ConfigurationError("a model needs at least one layer")
        if self.layers[0].c_in != 2 or self.layers[-1].c_out != 2:
            raise ConfigurationError("models must map 2 input channels to 2 output channels")
        last = self.layers[-1]
        if last.activation != "linear" or last.bn is not None:
            raise ConfigurationError("the output layer must be linear without batch norm")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.c_out != b.c_in:
                raise ConfigurationError(f"channel mismatch between layers: {a.c_out} -> {b.c_in}")

    def train(self, mode: bool = True) -> "Model":
        self.training = mode
        return self

    def eval(self) -> "Model":
        return self.train(False)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __iter__(self) -> Iterator[ConvLayer]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def __call__(self, x) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if self.input_quantizer is not None:
            h = self.input_quantizer(h, self.training)
        for layer in self.layers:
            h = layer(h, self.training)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Inference on a ``(B, 2, N, M)`` or ``(2, N, M)`` array without touching train state."""
        was = self.training
        self.training = False
        try:
            x = np.asarray(x, dtype=self.dtype)
            single = x.ndim == 3
            out = self(x[None] if single else x).data
        finally:
            self.training = was
        return out[0] if single else out


def model_forward(model: Model, patch) -> np.ndarray:
    """Eval-mode forward of one :class:`~qrim.rd.NormalizedPatch`; returns ``(2, N, M)``."""
    channels = patch.channels if hasattr(patch, "channels") else np.asarray(patch)
    return model.predict(channels)
