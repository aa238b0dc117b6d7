"""Range-Doppler processing: two DFT stages plus network-input normalisation.

The transforms are unnormalised, ``S[p, q] = sum_n sum_m w[n] v[m] s[n, m]
exp(-j 2 pi (p n / N + q m / M))``.  Power-of-two axes use an iterative
radix-2 FFT, every other length falls back to the direct DFT sum.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, ShapeError
from .radar_sim import IfSignal

__all__ = [
    "Stage",
    "RdMap",
    "NormalizedPatch",
    "fft_radix2",
    "dft_direct",
    "dft",
    "range_dft",
    "doppler_dft",
    "dft_2d",
    "to_rd_map",
    "normalize",
    "denormalize",
    "hann",
]


class Stage(enum.IntEnum):
    TIME = 0
    RANGE = 1
    RANGE_DOPPLER = 2


@dataclass(frozen=True)
class RdMap:
    data: np.ndarray
    stage: Stage = Stage.RANGE_DOPPLER

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ShapeError(f"RdMap needs a 2-D array, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DegenerateInputError("RdMap contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)


@dataclass(frozen=True)
class NormalizedPatch:
    """Real/imaginary parts as a ``(2, N, M)`` array plus the scale that undoes it."""

    channels: np.ndarray
    scale: float

    def __post_init__(self):
        if self.channels.ndim != 3 or self.channels.shape[0] != 2:
            raise ShapeError(f"expected (2, N, M) channels, got {self.channels.shape}")


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Iterative decimation-in-time radix-2 FFT along ``axis``."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, 0)
    n = x.shape[0]
    if not _is_pow2(n):
        raise ShapeError(f"radix-2 FFT needs a power-of-two length, got {n}")
    rest = x.shape[1:]
    y = x[_bit_reverse(n)].reshape(n, -1)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)[None, :, None]
        y = y.reshape(n // size, size, -1)
        even = y[:, :half].copy()
        odd = y[:, half:] * tw
        y[:, :half] = even + odd
        y[:, half:] = even - odd
        size *= 2
    return np.moveaxis(y.reshape((n,) + rest), 0, axis)


def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    # reduce the exponent mod n first so large products keep full precision
    return np.exp(-2j * np.pi * (np.outer(k, k) % n) / n)


def dft_direct(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Direct O(n^2) DFT sum along ``axis``; valid for any length."""
    x = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, 0)
    out = np.tensordot(_dft_matrix(x.shape[0]), x, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def dft(x: np.ndarray, axis: int = 0) -> np.ndarray:
    n = np.shape(x)[axis]
    return fft_radix2(x, axis) if _is_pow2(n) else dft_direct(x, axis)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _window(n: int, window: str) -> np.ndarray:
    if window == "none":
        return np.ones(n)
    if window == "hann":
        return hann(n)
    raise ConfigurationError(f"unknown window {window!r}; use 'none' or 'hann'")


def _as_array(signal) -> np.ndarray:
    data = signal.data if isinstance(signal, (IfSignal, RdMap)) else np.asarray(signal)
    if data.ndim != 2:
        raise ShapeError(f"expected an N x M matrix, got shape {data.shape}")
    if min(data.shape) < 8:
        raise ShapeError(f"both dimensions must be >= 8, got {data.shape}")
    return data


def range_dft(signal, window: str = "none") -> RdMap:
    """First stage: DFT over fast time ``n`` for each ramp."""
    if isinstance(signal, RdMap) and signal.stage != Stage.TIME:
        raise ConfigurationError(f"range DFT expects a time-domain input, got stage {signal.stage.name}")
    data = _as_array(signal)
    w = _window(data.shape[0], window)[:, None]
    return RdMap(dft(w * data, axis=0), Stage.RANGE)


def doppler_dft(rmap: RdMap, window: str = "none") -> RdMap:
    """Second stage: DFT over slow time ``m`` for each range bin."""
    if rmap.stage != Stage.RANGE:
        raise ConfigurationError(f"Doppler DFT expects stage RANGE, got {rmap.stage.name}")
    w = _window(rmap.shape[1], window)[None, :]
    return RdMap(dft(w * rmap.data, axis=1), Stage.RANGE_DOPPLER)


def dft_2d(signal, window: str = "none") -> RdMap:
    """IF matrix (``IfSignal`` or array) -> range-Doppler map."""
    return doppler_dft(range_dft(signal, window), window)


to_rd_map = dft_2d


def normalize(rd: RdMap, scale: float | None = None) -> NormalizedPatch:
    """Split into real/imag channels divided by the peak magnitude.

    ``scale`` overrides the peak magnitude, which lets a clean training target
    share the scale of its interfered input.
    """
    if rd.stage != Stage.RANGE_DOPPLER:
        raise ConfigurationError(f"normalize expects a range-Doppler map, got {rd.stage.name}")
    if scale is None:
        scale = float(np.max(np.abs(rd.data)))
        if scale == 0.0:
            raise DegenerateInputError("cannot normalise an all-zero map")
    elif not scale > 0:
        raise ConfigurationError(f"scale must be > 0, got {scale}")
    channels = np.stack([rd.data.real, rd.data.imag]) / scale
    return NormalizedPatch(channels, float(scale))


def denormalize(patch: NormalizedPatch) -> RdMap:
    if not patch.scale > 0:
        raise ConfigurationError(f"scale must be > 0, got {patch.scale}")
    ch = np.asarray(patch.channels, dtype=np.float64)
    return RdMap((ch[0] + 1j * ch[1]) * patch.scale, Stage.RANGE_DOPPLER)
