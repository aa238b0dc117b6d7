"""Bit-exact packing of quantized weight codes.

Code ``i`` occupies bits ``[i*b, (i+1)*b)`` of a little-endian bit stream
(least significant bit first, within and across bytes).  Signed integer
codes ``k`` in ``[-q, q]`` are stored offset as ``k + q``; binary codes store
``1`` for ``+1`` and ``0`` for ``-1``.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, DatasetError
from .qat import integer_codes, quantize_binary, weight_dynamic_range

__all__ = ["pack_bits", "unpack_bits", "encode_weights", "decode_weights", "packed_size"]


def packed_size(count: int, bits: int) -> int:
    return (count * bits + 7) // 8


def pack_bits(values: np.ndarray, bits: int) -> bytes:
    """Pack unsigned integers ``0 <= v < 2**bits`` into a little-endian bit stream."""
    if not 1 <= bits <= 16:
        raise ConfigurationError(f"can only pack 1..16 bit codes, got {bits}")
    v = np.asarray(values, dtype=np.int64).ravel()
    if v.size and (v.min() < 0 or v.max() >= 1 << bits):
        raise ConfigurationError(f"codes out of range for {bits}-bit packing")
    bitmat = (v[:, None] >> np.arange(bits)) & 1
    return np.packbits(bitmat.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack_bits(data: bytes, bits: int, count: int) -> np.ndarray:
    if len(data) < packed_size(count, bits):
        raise DatasetError(f"packed stream too short for {count} codes of {bits} bits")
    stream = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")[: count * bits]
    bitmat = stream.reshape(count, bits).astype(np.int64)
    return (bitmat << np.arange(bits)).sum(axis=1)


def encode_weights(w: np.ndarray, scheme: str, bits: int) -> tuple[float, bytes]:
    """Quantize real weights and pack their codes; returns ``(alpha, payload)``."""
    alpha = weight_dynamic_range(w)
    if scheme == "binary_sign":
        codes = (quantize_binary(w) > 0).astype(np.int64)
        return alpha, pack_bits(codes, 1)
    if scheme == "integer_dynamic":
        q = 2 ** (bits - 1) - 1
        codes = integer_codes(w, alpha, bits).astype(np.int64) + q
        return alpha, pack_bits(codes, bits)
    raise ConfigurationError(f"scheme {scheme!r} has no packed representation")


def decode_weights(payload: bytes, scheme: str, bits: int, alpha: float, shape, alpha_scaling: bool = True,
                   dtype=np.float64) -> np.ndarray:
    """Inverse of :func:`encode_weights`: the quantized weights ``W_q``."""
    count = int(np.prod(shape))
    if scheme == "binary_sign":
        signs = unpack_bits(payload, 1, count) * 2 - 1
        scale = alpha if alpha_scaling else 1.0
        return (signs * scale).astype(dtype).reshape(shape)
    q = 2 ** (bits - 1) - 1
    codes = unpack_bits(payload, bits, count) - q
    return ((codes / q) * alpha).astype(dtype).reshape(shape)
