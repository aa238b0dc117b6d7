"""Quantization-aware training with straight-through gradient estimators.

Weights keep a real-valued auxiliary copy ``W`` that receives the optimizer
updates; the forward pass uses ``W_q = Q(W / alpha) * alpha`` with ``alpha``
the per-layer dynamic range.  Quantizers are piecewise constant, so the
backward pass substitutes a surrogate derivative:

* weights: identity,
* sign activation: ``1 - tanh(x)**2``,
* integer activation: identity inside ``[-alpha, alpha]``, zero outside.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, UsageError
from .nn import functional as F
from .nn.layers import ConvLayer, Model
from .nn.tensor import Tensor

__all__ = [
    "SCHEMES",
    "BIT_WIDTHS",
    "QuantSpec",
    "ModelConfig",
    "channel_schedule",
    "quantize_binary",
    "quantize_integer",
    "integer_codes",
    "round_half_away",
    "ste_backward",
    "weight_dynamic_range",
    "ActivationRange",
    "WeightQuantizer",
    "SignActivation",
    "IntegerActivation",
    "InputQuantizer",
    "build_model",
    "clip_auxiliary_weights",
    "effective_weights",
]

SCHEMES = ("none", "binary_sign", "integer_dynamic")
BIT_WIDTHS = (1, 2, 4, 6, 8, 32)


def _scheme_for(bits: int) -> str:
    if bits == 32:
        return "none"
    if bits == 1:
        return "binary_sign"
    return "integer_dynamic"


@dataclass(frozen=True)
class QuantSpec:
    """Bit-widths and schemes for weights and activations.

    ``quantize_io`` stores (and, for the input, quantises) the network input
    and output feature maps at the activation bit-width; with ``False`` they
    stay 32-bit.  ``alpha_scaling`` scales binary weights by the dynamic
    range (``+-alpha``) instead of using raw ``+-1``.
    """

    weight_bits: int = 32
    act_bits: int = 32
    weight_scheme: str | None = None
    act_scheme: str | None = None
    quantize_io: bool = True
    alpha_scaling: bool = True

    def __post_init__(self):
        if self.weight_scheme is None:
            object.__setattr__(self, "weight_scheme", _scheme_for(self.weight_bits))
        if self.act_scheme is None:
            object.__setattr__(self, "act_scheme", _scheme_for(self.act_bits))
        for bits, scheme in ((self.weight_bits, self.weight_scheme), (self.act_bits, self.act_scheme)):
            if scheme not in SCHEMES:
                raise ConfigurationError(f"unknown quantization scheme {scheme!r}")
            if bits not in BIT_WIDTHS:
                raise ConfigurationError(f"bit-width must be one of {BIT_WIDTHS}, got {bits}")
            if (bits == 32) != (scheme == "none") or (bits == 1) != (scheme == "binary_sign"):
                raise ConfigurationError(f"bit-width {bits} is inconsistent with scheme {scheme!r}")

    @classmethod
    def uniform(cls, bits: int, **kw) -> "QuantSpec":
        """Same bit-width for weights and activations."""
        return cls(weight_bits=bits, act_bits=bits, **kw)

    @property
    def is_real(self) -> bool:
        return self.weight_scheme == "none" and self.act_scheme == "none"

    @property
    def io_bits(self) -> int:
        return self.act_bits if self.quantize_io else 32

    @property
    def tag(self) -> str:
        """Short label: ``R`` real, ``B`` binary weights, ``S`` sign activations, else ``w8a8``."""
        if self.is_real:
            return "R"
        if self.weight_bits == 1 and self.act_bits == 32:
            return "B"
        if self.weight_bits == 32 and self.act_bits == 1:
            return "S"
        return f"w{self.weight_bits}a{self.act_bits}"

    def to_dict(self) -> dict:
        return {
            "weight_bits": self.weight_bits, "act_bits": self.act_bits,
            "weight_scheme": self.weight_scheme, "act_scheme": self.act_scheme,
            "quantize_io": self.quantize_io, "alpha_scaling": self.alpha_scaling,
        }


_NAME_RE = re.compile(r"^L(\d+)[-_]C(\d+)[-_]([AB])$", re.IGNORECASE)


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    channels: int
    arch: str = "B"
    quant: QuantSpec = field(default_factory=QuantSpec)

    def __post_init__(self):
        object.__setattr__(self, "arch", str(self.arch).upper())
        if self.arch not in ("A", "B"):
            raise ConfigurationError(f"architecture must be 'A' or 'B', got {self.arch!r}")
        if self.layers < 2:
            raise ConfigurationError(f"a model needs at least 2 layers, got {self.layers}")
        if self.channels < 1 or (self.arch == "B" and self.channels < 4):
            raise ConfigurationError(f"too few channels ({self.channels}) for architecture {self.arch}")

    @classmethod
    def parse(cls, name: str, quant: QuantSpec | None = None) -> "ModelConfig":
        """``"L3-C16-B"`` (or ``L3_C16_B``) -> ModelConfig."""
        m = _NAME_RE.match(name.strip())
        if m is None:
            raise ConfigurationError(f"cannot parse model name {name!r}; expected e.g. 'L3-C16-B'")
        return cls(int(m.group(1)), int(m.group(2)), m.group(3), quant or QuantSpec())

    @property
    def name(self) -> str:
        return f"L{self.layers}-C{self.channels}-{self.arch}"

    @property
    def tag(self) -> str:
        return f"{self.name}/{self.quant.tag}"

    def with_quant(self, quant: QuantSpec) -> "ModelConfig":
        return replace(self, quant=quant)

    def to_dict(self) -> dict:
        return {"layers": self.layers, "channels": self.channels, "arch": self.arch, "quant": self.quant.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        quant = QuantSpec(**d.pop("quant", {}))
        return cls(quant=quant, **d)


def channel_schedule(config: ModelConfig) -> list[tuple[int, int]]:
    """Per-layer ``(c_in, c_out)`` pairs.

    Architecture A keeps ``C`` channels in every hidden layer.  Architecture
    B halves the channel count per layer, never going below ``min(8, C // 2)``
    hidden channels.  The last layer always has 2 outputs.
    """
    L, C = config.layers, config.channels
    if config.arch == "A":
        hidden = [C] * (L - 1)
    else:
        floor = min(8, C // 2)
        hidden = [max(C >> i, floor) for i in range(L - 1)]
    outs = hidden + [2]
    ins = [2] + hidden
    return list(zip(ins, outs))


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_binary(x):
    """Sign with ``Q(0) = +1``."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def _levels(bits: int) -> int:
    if not 2 <= bits <= 8:
        raise ConfigurationError(f"integer quantization supports 2..8 bits, got {bits}")
    return 2 ** (bits - 1) - 1


def integer_codes(x, alpha: float, bits: int) -> np.ndarray:
    """Integer codes ``k`` in ``[-q, q]`` with ``W_q = (k / q) * alpha``."""
    if not alpha > 0:
        raise ConfigurationError(f"dynamic range must be > 0, got {alpha}")
    q = _levels(bits)
    return np.clip(round_half_away(np.asarray(x) / alpha * q), -q, q)


def quantize_integer(x, alpha: float, bits: int):
    """Symmetric uniform quantizer with ``2**bits - 1`` levels on ``[-alpha, alpha]``."""
    q = _levels(bits)
    # (k / q) is exactly 1 at the top level, so x = alpha maps back to alpha bit-exactly
    return (integer_codes(x, alpha, bits) / q) * alpha


def ste_backward(kind: str, upstream, preact=None, alpha: float | None = None):
    """Surrogate gradient of a quantizer given the upstream gradient."""
    if kind == "weight_quant":
        return np.asarray(upstream) * 1.0
    if kind == "sign_act":
        if preact is None:
            raise UsageError("sign_act needs the cached pre-activation")
        return np.asarray(upstream) * (1.0 - np.tanh(preact) ** 2)
    if kind == "integer_act":
        if preact is None or alpha is None:
            raise UsageError("integer_act needs the cached pre-activation and its dynamic range")
        return np.asarray(upstream) * (np.abs(preact) <= alpha)
    raise UsageError(f"unknown STE kind {kind!r}")


def weight_dynamic_range(w) -> float:
    """``max |W|``; an all-zero weight tensor falls back to 1.0."""
    alpha = float(np.max(np.abs(w))) if np.size(w) else 0.0
    if alpha == 0.0:
        warnings.warn("all-zero weights; using dynamic range 1.0", RuntimeWarning, stacklevel=2)
        return 1.0
    return alpha


class ActivationRange:
    """EMA of per-batch max |pre-activation|; frozen outside training."""

    def __init__(self, decay: float = 0.9, value: float | None = None):
        self.decay = decay
        self.value = value

    def update(self, batch_max: float) -> float:
        if self.value is None:
            self.value = float(batch_max)
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * float(batch_max)
        return self.value

    def current(self, x: np.ndarray, training: bool) -> float:
        batch_max = float(np.max(np.abs(x))) if x.size else 0.0
        if training or self.value is None:
            self.update(batch_max)
        if not self.value > 0:
            return 1.0
        return self.value


class WeightQuantizer:
    """Maps auxiliary weights to their quantized image; identity STE backward."""

    def __init__(self, scheme: str, bits: int, alpha_scaling: bool = True):
        if scheme not in ("binary_sign", "integer_dynamic"):
            raise ConfigurationError(f"weight quantizer needs a quantizing scheme, got {scheme!r}")
        self.scheme = scheme
        self.bits = bits
        self.alpha_scaling = alpha_scaling
        self.alpha: float | None = None
        self.alpha_init: float | None = None
        # set when weights were restored from packed codes: reuse the stored range verbatim
        self.fixed_alpha: float | None = None

    def quantize(self, w: np.ndarray) -> np.ndarray:
        alpha = self.fixed_alpha if self.fixed_alpha is not None else weight_dynamic_range(w)
        self.alpha = alpha
        if self.alpha_init is None:
            self.alpha_init = alpha
        if self.scheme == "binary_sign":
            scale = alpha if self.alpha_scaling else 1.0
            return (quantize_binary(w) * scale).astype(w.dtype)
        return quantize_integer(w, alpha, self.bits).astype(w.dtype)

    def __call__(self, w: Tensor) -> Tensor:
        return F.straight_through(w, self.quantize(w.data), None, "weight_quant")


class SignActivation:
    bits = 1
    scheme = "binary_sign"

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        pre = x.data
        return F.straight_through(x, quantize_binary(pre).astype(pre.dtype), 1.0 - np.tanh(pre) ** 2, "sign_act")


class IntegerActivation:
    scheme = "integer_dynamic"

    def __init__(self, bits: int, decay: float = 0.9):
        _levels(bits)
        self.bits = bits
        self.range = ActivationRange(decay)

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        pre = x.data
        alpha = self.range.current(pre, training)
        out = quantize_integer(pre, alpha, self.bits).astype(pre.dtype)
        return F.straight_through(x, out, (np.abs(pre) <= alpha).astype(pre.dtype), "integer_act")


class InputQuantizer:
    """Quantises the normalised network input (|x| <= 1, so the range is fixed to 1)."""

    def __init__(self, scheme: str, bits: int):
        self.scheme = scheme
        self.bits = bits

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        d = x.data
        if self.scheme == "binary_sign":
            return Tensor(quantize_binary(d).astype(d.dtype))
        return Tensor(quantize_integer(d, 1.0, self.bits).astype(d.dtype))


# Kaiming bound multiplier of the linear output layer.  Peak-normalised RD
# maps are mostly far below 1 in magnitude while the BN-fed output layer starts
# at unit scale; a small initial gain keeps early training from spending its
# first epochs just shrinking the output.
OUTPUT_INIT_GAIN = 0.05


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float64,
                output_init_gain: float = OUTPUT_INIT_GAIN) -> Model:
    """Instantiate the (possibly quantized) denoising CNN for ``config``.

    Layer 1 is Conv -> activation, hidden layers are Conv -> BN -> activation
    and the output layer is a linear Conv with 2 channels.
    """
    quant = config.quant
    schedule = channel_schedule(config)
    rng = np.random.default_rng(seed)
    layers = []
    for i, (c_in, c_out) in enumerate(schedule):
        last = i == len(schedule) - 1
        wq = None
        if quant.weight_scheme != "none":
            wq = WeightQuantizer(quant.weight_scheme, quant.weight_bits, quant.alpha_scaling)
        activation, aq = "relu", None
        if last:
            activation = "linear"
        elif quant.act_scheme == "binary_sign":
            activation, aq = "sign", SignActivation()
        elif quant.act_scheme == "integer_dynamic":
            activation, aq = "integer", IntegerActivation(quant.act_bits)
        layers.append(ConvLayer(
            c_in, c_out, activation=activation, batch_norm=0 < i < len(schedule) - 1,
            rng=rng, dtype=dtype, weight_quantizer=wq, act_quantizer=aq,
        ))
        if last:
            layers[-1].weight.data *= output_init_gain
        if wq is not None:
            wq.alpha_init = weight_dynamic_range(layers[-1].weight.data)
    input_q = None
    if quant.quantize_io and quant.act_scheme != "none":
        input_q = InputQuantizer(quant.act_scheme, quant.act_bits)
    return Model(layers, input_quantizer=input_q, config=config)


def clip_auxiliary_weights(model: Model, factor: float = 4.0) -> None:
    """Clip each quantized layer's auxiliary weights to ``+-factor * alpha_init``."""
    for layer in model.layers:
        wq = layer.weight_quantizer
        if wq is not None and wq.alpha_init is not None:
            bound = factor * wq.alpha_init
            np.clip(layer.weight.data, -bound, bound, out=layer.weight.data)


def effective_weights(layer: ConvLayer) -> np.ndarray:
    """Weights as used by the forward pass (quantized image for QAT layers)."""
    if layer.weight_quantizer is None:
        return layer.weight.data
    return layer.weight_quantizer.quantize(layer.weight.data)
