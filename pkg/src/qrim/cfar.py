"""Two-dimensional cell-averaging CFAR on range-Doppler magnitudes.

For every cell under test the background power is the mean ``|x|**2`` over
a square training band of ``train_cells`` cells per side, separated from the
cell by ``guard_cells``.  A cell is a detection when its power exceeds
``scale_factor * background`` and it is the largest value inside its own
guard window, so one object yields one detection.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator, NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError

__all__ = ["CfarConfig", "Detection", "DetectionList", "scale_from_pfa", "ca_cfar", "cfar_threshold"]


def scale_from_pfa(pfa: float, n_train: int) -> float:
    """Threshold multiplier on the mean training power for exponential (square-law) noise.

    ``n_train * (pfa ** (-1 / n_train) - 1)``.
    """
    if not 0.0 < pfa < 1.0:
        raise ConfigurationError(f"P_fa must lie in (0, 1), got {pfa}")
    if n_train < 1:
        raise ConfigurationError(f"need at least one training cell, got {n_train}")
    return n_train * (pfa ** (-1.0 / n_train) - 1.0)


@dataclass(frozen=True)
class CfarConfig:
    train_cells: int = 8
    guard_cells: int = 2
    pfa: float = 1e-3
    wrap: bool = True
    scale_factor: float | None = None

    def __post_init__(self):
        if self.train_cells < 1 or self.guard_cells < 0:
            raise ConfigurationError("need train_cells >= 1 and guard_cells >= 0")
        if self.scale_factor is not None and not self.scale_factor > 0:
            raise ConfigurationError("scale_factor must be > 0")
        if self.scale_factor is None:
            scale_from_pfa(self.pfa, self.n_train)  # validates pfa

    @property
    def window(self) -> int:
        return 2 * (self.train_cells + self.guard_cells) + 1

    @property
    def guard_window(self) -> int:
        return 2 * self.guard_cells + 1

    @property
    def n_train(self) -> int:
        return self.window**2 - self.guard_window**2

    @property
    def scale(self) -> float:
        return self.scale_factor if self.scale_factor is not None else scale_from_pfa(self.pfa, self.n_train)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


class Detection(NamedTuple):
    row: int
    col: int
    magnitude: float


class DetectionList:
    """Detections sorted by descending magnitude, ties by ``(row, col)``."""

    def __init__(self, cells=()):
        cells = [Detection(int(r), int(c), float(m)) for r, c, m in cells]
        if len({(d.row, d.col) for d in cells}) != len(cells):
            raise ConfigurationError("duplicate cells in detection list")
        self.cells = sorted(cells, key=lambda d: (-d.magnitude, d.row, d.col))

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self) -> Iterator[Detection]:
        return iter(self.cells)

    def __eq__(self, other) -> bool:
        return isinstance(other, DetectionList) and self.cells == other.cells

    def __repr__(self):
        return f"DetectionList({self.cells!r})"

    @property
    def positions(self) -> set[tuple[int, int]]:
        return {(d.row, d.col) for d in self.cells}


# magnitudes below this fraction of the map peak are treated as numerical zeros
ZERO_FLOOR = 1e-9


def _training_kernel(config: CfarConfig) -> np.ndarray:
    k = np.ones((config.window, config.window))
    g0 = config.train_cells
    k[g0:g0 + config.guard_window, g0:g0 + config.guard_window] = 0.0
    return k


def cfar_threshold(power: np.ndarray, config: CfarConfig) -> np.ndarray:
    """Per-cell power threshold ``scale * mean training power``.

    The training band is summed directly (no difference of box sums), so a
    strong peak cannot leave cancellation residue in the threshold of its
    neighbours.
    """
    kernel = _training_kernel(config)
    mode = "wrap" if config.wrap else "constant"
    train_sum = ndimage.correlate(power, kernel, mode=mode, cval=0.0)
    if config.wrap:
        n_train = float(config.n_train)
    else:
        n_train = ndimage.correlate(np.ones_like(power), kernel, mode="constant", cval=0.0)
    return config.scale * train_sum / n_train


def ca_cfar(magnitude: np.ndarray, config: CfarConfig | None = None) -> DetectionList:
    config = config or CfarConfig()
    mag = np.asarray(magnitude, dtype=np.float64)
    if mag.ndim != 2:
        raise ConfigurationError(f"CFAR expects a 2-D magnitude map, got shape {mag.shape}")
    if min(mag.shape) < config.window:
        raise ConfigurationError(f"map {mag.shape} is smaller than the {config.window}x{config.window} CFAR window")
    if np.any(mag < 0):
        raise ConfigurationError("magnitudes must be non-negative")
    power = mag * mag
    exceed = power > cfar_threshold(power, config)
    local_max = power >= ndimage.maximum_filter(
        power, size=config.guard_window, mode="wrap" if config.wrap else "constant", cval=0.0
    )
    significant = mag > ZERO_FLOOR * mag.max() if mag.size else mag > 0
    rows, cols = np.nonzero(exceed & local_max & significant)
    return DetectionList(zip(rows, cols, mag[rows, cols]))
