"""Binary model checkpoints (``QRIM`` files).

Layout, all little-endian::

    magic  b"QRIM"
    u16    version (1)
    u8     float width of stored arrays: 4 (float32) or 8 (float64)
    u8     flags: bit 0 packed weights, bit 1 quantize_io, bit 2 alpha_scaling
    u32    length of UTF-8 JSON metadata ``{"model": ModelConfig, "input_shape": [N, M] | null}``
    u16    layer count
    per layer:
        u16 c_in, u16 c_out
        u8  activation (0 relu, 1 linear, 2 sign, 3 integer)
        u8  has batch norm
        u8  weight scheme, u8 act scheme  (0 none, 1 binary_sign, 2 integer_dynamic)
        u8  weight bits, u8 act bits
        f64 weight alpha, f64 initial weight alpha, f64 activation range (NaN if unused)
        bias[c_out]; if BN: gamma, beta, running mean, running var  (float width)
        weights: packed  -> u32 byte count + packed codes
                 otherwise c_out*c_in*3*3 floats

Packed files store only the quantized weights.  On load the auxiliary
weights are set to ``W_q`` and the stored ``alpha`` is pinned, so inference
reproduces the saved model bit for bit.
"""
from __future__ import annotations

import json
import math
import os
import struct

import numpy as np

from .errors import DatasetError
from .nn.layers import Model
from .packing import decode_weights, encode_weights
from .qat import SCHEMES, ModelConfig, build_model

__all__ = ["save_checkpoint", "load_checkpoint", "checkpoint_bytes", "model_from_bytes", "MAGIC", "VERSION"]

MAGIC = b"QRIM"
VERSION = 1
_ACTS = ("relu", "linear", "sign", "integer")
_F_PACKED, _F_IO, _F_ALPHA = 1, 2, 4


def _nan_if_none(v) -> float:
    return math.nan if v is None else float(v)


def _none_if_nan(v: float):
    return None if math.isnan(v) else v


def checkpoint_bytes(model: Model, packed: bool = False, float_width: int | None = None,
                     input_shape: tuple[int, int] | None = None) -> bytes:
    config: ModelConfig = model.config
    if config is None:
        raise DatasetError("model has no ModelConfig attached; build it with qrim.qat.build_model")
    if float_width is None:
        float_width = np.dtype(model.dtype).itemsize
    if float_width not in (4, 8):
        raise DatasetError(f"float width must be 4 or 8, got {float_width}")
    fdt = np.dtype("<f4" if float_width == 4 else "<f8")
    q = config.quant
    packed = packed and q.weight_scheme != "none"
    flags = (_F_PACKED if packed else 0) | (_F_IO if q.quantize_io else 0) | (_F_ALPHA if q.alpha_scaling else 0)
    if input_shape is None:
        input_shape = getattr(model, "input_shape", None)
    meta = {"model": config.to_dict(), "input_shape": list(input_shape) if input_shape else None}
    cfg = json.dumps(meta, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<HBBI", VERSION, float_width, flags, len(cfg)), cfg, struct.pack("<H", len(model))]
    for layer in model:
        wq, aq = layer.weight_quantizer, layer.act_quantizer
        w = layer.weight.data
        alpha = alpha_init = None
        payload = None
        if wq is not None:
            if packed:
                alpha, payload = encode_weights(w, wq.scheme, wq.bits)
            else:
                wq.quantize(w)
                alpha = wq.alpha
            alpha_init = wq.alpha_init
        act_range = getattr(getattr(aq, "range", None), "value", None)
        out.append(struct.pack(
            "<HHBBBBBBddd", layer.c_in, layer.c_out, _ACTS.index(layer.activation), layer.bn is not None,
            SCHEMES.index(wq.scheme if wq else "none"), SCHEMES.index(aq.scheme if aq else "none"),
            wq.bits if wq else 32, aq.bits if aq else 32,
            _nan_if_none(alpha), _nan_if_none(alpha_init), _nan_if_none(act_range),
        ))
        arrays = [layer.bias.data]
        if layer.bn is not None:
            bn = layer.bn
            arrays += [bn.gamma.data, bn.beta.data, bn.running_mean, bn.running_var]
        out += [np.ascontiguousarray(a, dtype=fdt).tobytes() for a in arrays]
        if payload is not None:
            out += [struct.pack("<I", len(payload)), payload]
        else:
            out.append(np.ascontiguousarray(w, dtype=fdt).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DatasetError("checkpoint is truncated")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: np.dtype, count: int) -> np.ndarray:
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).copy()


def model_from_bytes(data: bytes, dtype=None) -> Model:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise DatasetError("not a QRIM checkpoint (bad magic)")
    version, width, flags, cfg_len = r.unpack("<HBBI")
    if version != VERSION:
        raise DatasetError(f"unsupported checkpoint version {version}")
    if width not in (4, 8):
        raise DatasetError(f"invalid float width {width}")
    fdt = np.dtype("<f4" if width == 4 else "<f8")
    dtype = np.dtype(dtype) if dtype is not None else np.dtype(fdt.newbyteorder("="))
    try:
        meta = json.loads(r.take(cfg_len).decode())
        config = ModelConfig.from_dict(meta["model"])
    except (ValueError, TypeError, KeyError) as exc:
        raise DatasetError(f"corrupt model config: {exc}") from exc
    (n_layers,) = r.unpack("<H")
    model = build_model(config, seed=0, dtype=dtype)
    if n_layers != len(model):
        raise DatasetError(f"checkpoint has {n_layers} layers, config implies {len(model)}")
    for layer in model:
        c_in, c_out, act, has_bn, ws, as_, wbits, abits, alpha, alpha_init, act_range = r.unpack("<HHBBBBBBddd")
        if (c_in, c_out, _ACTS[act], bool(has_bn)) != (layer.c_in, layer.c_out, layer.activation, layer.bn is not None):
            raise DatasetError("layer metadata does not match the stored model config")
        layer.bias.data[...] = r.array(fdt, c_out)
        if layer.bn is not None:
            bn = layer.bn
            for target in (bn.gamma.data, bn.beta.data, bn.running_mean, bn.running_var):
                target[...] = r.array(fdt, c_out)
        shape = layer.weight.shape
        wq = layer.weight_quantizer
        if flags & _F_PACKED and wq is not None:
            (n,) = r.unpack("<I")
            layer.weight.data[...] = decode_weights(r.take(n), SCHEMES[ws], wbits, alpha, shape,
                                                    alpha_scaling=bool(flags & _F_ALPHA), dtype=dtype)
            wq.fixed_alpha = alpha
        else:
            layer.weight.data[...] = r.array(fdt, int(np.prod(shape))).reshape(shape)
        if wq is not None:
            wq.alpha_init = _none_if_nan(alpha_init)
        rng = getattr(layer.act_quantizer, "range", None)
        if rng is not None:
            rng.value = _none_if_nan(act_range)
    if r.pos != len(data):
        raise DatasetError(f"{len(data) - r.pos} trailing bytes in checkpoint")
    shape = meta.get("input_shape")
    model.input_shape = tuple(shape) if shape else None
    return model


def save_checkpoint(model: Model, path: str | os.PathLike, packed: bool = False,
                    float_width: int | None = None, input_shape: tuple[int, int] | None = None) -> None:
    data = checkpoint_bytes(model, packed=packed, float_width=float_width, input_shape=input_shape)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise DatasetError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | os.PathLike, dtype=None) -> Model:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DatasetError(f"cannot read checkpoint {path}: {exc}") from exc
    return model_from_bytes(data, dtype=dtype)
