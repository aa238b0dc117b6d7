"""Synthetic FMCW/chirp-sequence IF signals with burst interference.

Every object reflection is a 2-D complex exponential over fast time ``n`` and
slow time (ramp index) ``m``; on-grid targets therefore land on exactly one
range-Doppler cell, which gives exact ground truth.  Non-coherent mutual
interference is modelled directly in the time domain as short, tapered
chirp bursts confined to single ramps.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Target",
    "Burst",
    "InterferenceSpec",
    "Scene",
    "IfSignal",
    "SceneRanges",
    "synthesize_clean",
    "add_interference",
    "synthesize",
    "sample_random_scene",
    "burst_waveform",
]


@dataclass(frozen=True)
class Target:
    range_bin: float
    doppler_bin: float
    amplitude: float = 1.0
    phase: float = 0.0

    @property
    def cell(self) -> tuple[int, int]:
        return int(round(self.range_bin)), int(round(self.doppler_bin))

    @property
    def on_grid(self) -> bool:
        return float(self.range_bin).is_integer() and float(self.doppler_bin).is_integer()


@dataclass(frozen=True)
class Burst:
    """One interference burst inside ramp ``ramp``.

    The burst covers the ``width`` samples ``center - width/2 <= n < center + width/2``.
    ``frequency`` (cycles per sample) is the instantaneous IF frequency at the
    burst centre; an interferer with a nearly parallel chirp keeps a constant
    non-zero offset, which puts its energy into a band of range bins.
    """

    ramp: int
    center: int
    width: int
    chirp_slope: float
    amplitude: float
    phase: float = 0.0
    frequency: float = 0.0


@dataclass(frozen=True)
class InterferenceSpec:
    bursts: tuple[Burst, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "bursts", tuple(self.bursts))

    def validate(self, n_samples: int, n_ramps: int) -> None:
        for b in self.bursts:
            if b.width <= 0 or b.width % 2:
                raise ConfigurationError(f"burst width must be even and > 0, got {b.width}")
            if not 0 <= b.ramp < n_ramps:
                raise ConfigurationError(f"burst ramp {b.ramp} outside [0, {n_ramps})")
            if b.center - b.width // 2 < 0 or b.center + b.width // 2 > n_samples:
                raise ConfigurationError(
                    f"burst centred at {b.center} with width {b.width} does not fit "
                    f"into a ramp of {n_samples} samples"
                )
            if not -0.5 < b.chirp_slope < 0.5:
                raise ConfigurationError(f"chirp slope {b.chirp_slope} outside (-0.5, 0.5)")
            if not -0.5 <= b.frequency <= 0.5:
                raise ConfigurationError(f"burst frequency {b.frequency} outside [-0.5, 0.5]")
            if b.amplitude < 0:
                raise ConfigurationError("burst amplitude must be >= 0")


@dataclass(frozen=True)
class Scene:
    n_samples: int = 96
    n_ramps: int = 96
    targets: tuple[Target, ...] = ()
    noise_std: float = 0.0
    interference: InterferenceSpec = field(default_factory=InterferenceSpec)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_samples, self.n_ramps

    @property
    def ground_truth(self) -> list[tuple[int, int]]:
        """Cells of all targets, sorted (row, col)."""
        return sorted(t.cell for t in self.targets)

    def validate(self) -> None:
        N, M = self.n_samples, self.n_ramps
        if N < 8 or M < 8:
            raise ConfigurationError(f"scene must be at least 8x8, got {N}x{M}")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0")
        for t in self.targets:
            if not (0 <= t.range_bin < N and 0 <= t.doppler_bin < M):
                raise ConfigurationError(f"target {t} outside the {N}x{M} grid")
            if t.amplitude <= 0:
                raise ConfigurationError("target amplitude must be > 0")
        self.interference.validate(N, M)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["interference"] = {"bursts": [asdict(b) for b in self.interference.bursts]}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        d = dict(d)
        targets = tuple(Target(**t) for t in d.pop("targets", ()))
        bursts = tuple(Burst(**b) for b in d.pop("interference", {}).get("bursts", ()))
        return cls(targets=targets, interference=InterferenceSpec(bursts), **d)


@dataclass(frozen=True)
class IfSignal:
    data: np.ndarray
    scene: Scene

    def __post_init__(self):
        if self.data.shape != self.scene.shape:
            raise ConfigurationError(
                f"IF data shape {self.data.shape} does not match scene {self.scene.shape}"
            )


def synthesize_clean(scene: Scene) -> IfSignal:
    """Sum of target exponentials plus circular complex Gaussian receiver noise."""
    scene.validate()
    N, M = scene.shape
    n = np.arange(N)[:, None]
    m = np.arange(M)[None, :]
    data = np.zeros((N, M), dtype=np.complex128)
    for t in scene.targets:
        data += t.amplitude * np.exp(
            1j * (2 * np.pi * (t.range_bin * n / N + t.doppler_bin * m / M) + t.phase)
        )
    if scene.noise_std > 0:
        rng = np.random.default_rng(scene.seed)
        noise = rng.standard_normal((2, N, M))
        data += scene.noise_std * (noise[0] + 1j * noise[1])
    return IfSignal(data, scene)


def burst_waveform(burst: Burst) -> np.ndarray:
    """Complex samples of one burst: Hann-tapered linear chirp centred on ``burst.center``."""
    w = burst.width
    k = np.arange(w)
    offset = k - w // 2
    taper = np.sin(np.pi * (k + 0.5) / w) ** 2
    phase = np.pi * burst.chirp_slope * offset**2 + 2 * np.pi * burst.frequency * offset + burst.phase
    return burst.amplitude * taper * np.exp(1j * phase)


def add_interference(signal: IfSignal, spec: InterferenceSpec) -> IfSignal:
    N, M = signal.data.shape
    spec.validate(N, M)
    out = signal.data.copy()
    for b in spec.bursts:
        start = b.center - b.width // 2
        out[start:start + b.width, b.ramp] += burst_waveform(b)
    return IfSignal(out, replace(signal.scene, interference=spec))


def synthesize(scene: Scene) -> tuple[IfSignal, IfSignal]:
    """Return ``(clean, interfered)`` IF signals for a scene."""
    clean = synthesize_clean(scene)
    return clean, add_interference(clean, scene.interference)


@dataclass(frozen=True)
class SceneRanges:
    """Inclusive sampling ranges for :func:`sample_random_scene`.

    Integer ranges (target count, bins, burst count and width) are drawn
    uniformly over the integers; real ranges uniformly over the interval.
    Burst chirp slopes get a random sign.
    """

    n_samples: int = 96
    n_ramps: int = 96
    n_targets: tuple[int, int] = (1, 5)
    amplitude: tuple[float, float] = (0.05, 0.5)
    range_bins: tuple[int, int] | None = None
    doppler_bins: tuple[int, int] | None = None
    min_separation: int = 1
    off_grid: bool = False
    n_bursts: tuple[int, int] = (0, 0)
    burst_width: tuple[int, int] = (16, 64)
    burst_slope: tuple[float, float] = (0.005, 0.05)
    burst_amplitude: tuple[float, float] = (10.0, 50.0)
    burst_frequency: tuple[float, float] = (0.0, 0.0)
    noise_std: tuple[float, float] = (1.0, 1.0)
    # all bursts of a scene come from one interferer: shared width, slope and frequency
    single_interferer: bool = False

    def validate(self) -> None:
        N, M = self.n_samples, self.n_ramps
        if N < 8 or M < 8:
            raise ConfigurationError(f"scene must be at least 8x8, got {N}x{M}")
        pairs = {
            "n_targets": self.n_targets, "amplitude": self.amplitude,
            "n_bursts": self.n_bursts, "burst_width": self.burst_width,
            "burst_slope": self.burst_slope, "burst_amplitude": self.burst_amplitude,
            "burst_frequency": self.burst_frequency,
            "noise_std": self.noise_std,
            "range_bins": self._rbins, "doppler_bins": self._dbins,
        }
        for name, (lo, hi) in pairs.items():
            if lo > hi:
                raise ConfigurationError(f"empty range for {name}: [{lo}, {hi}]")
        if self.n_targets[0] < 0 or self.amplitude[0] <= 0 or self.noise_std[0] < 0:
            raise ConfigurationError("target count/amplitude/noise ranges out of bounds")
        if self._rbins[0] < 0 or self._rbins[1] >= N or self._dbins[0] < 0 or self._dbins[1] >= M:
            raise ConfigurationError("bin ranges must lie inside the grid")
        if self.n_bursts[0] < 0 or self.burst_amplitude[0] < 0:
            raise ConfigurationError("burst ranges out of bounds")
        if self.n_bursts[1] > 0 and (self.burst_width[0] < 2 or self.burst_width[1] > N):
            raise ConfigurationError(f"burst widths must lie in [2, {N}]")
        if not (0 <= self.burst_slope[0] and self.burst_slope[1] < 0.5):
            raise ConfigurationError("burst slope magnitudes must lie in [0, 0.5)")
        if not (-0.5 <= self.burst_frequency[0] and self.burst_frequency[1] <= 0.5):
            raise ConfigurationError("burst frequencies must lie in [-0.5, 0.5]")
        if self.min_separation < 1:
            raise ConfigurationError("min_separation must be >= 1")
        cells = (self._rbins[1] - self._rbins[0] + 1) * (self._dbins[1] - self._dbins[0] + 1)
        if self.n_targets[1] > cells:
            raise ConfigurationError(
                f"cannot place {self.n_targets[1]} separated targets in {cells} cells"
            )

    @property
    def _rbins(self) -> tuple[int, int]:
        return self.range_bins if self.range_bins is not None else (0, self.n_samples - 1)

    @property
    def _dbins(self) -> tuple[int, int]:
        return self.doppler_bins if self.doppler_bins is not None else (0, self.n_ramps - 1)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneRanges":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def _uniform_int(rng: np.random.Generator, bounds: Sequence[int]) -> int:
    return int(rng.integers(bounds[0], bounds[1], endpoint=True))


def _separated(cell, taken, sep, shape) -> bool:
    N, M = shape
    for r, d in taken:
        dr = abs(cell[0] - r)
        dd = abs(cell[1] - d)
        # RD axes are circular spectra
        dr = min(dr, N - dr)
        dd = min(dd, M - dd)
        if max(dr, dd) < sep:
            return False
    return True


def sample_random_scene(ranges: SceneRanges, seed: int, max_attempts: int = 10_000) -> Scene:
    """Draw a random scene; the same ``(ranges, seed)`` always yields the same scene."""
    ranges.validate()
    rng = np.random.default_rng(seed)
    N, M = ranges.n_samples, ranges.n_ramps
    rlo, rhi = ranges._rbins
    dlo, dhi = ranges._dbins

    n_targets = _uniform_int(rng, ranges.n_targets)
    taken: list[tuple[int, int]] = []
    targets = []
    attempts = 0
    while len(targets) < n_targets:
        attempts += 1
        if attempts > max_attempts:
            raise ConfigurationError(
                f"could not place {n_targets} targets with separation {ranges.min_separation}"
            )
        cell = (_uniform_int(rng, (rlo, rhi)), _uniform_int(rng, (dlo, dhi)))
        if cell in taken or not _separated(cell, taken, ranges.min_separation, (N, M)):
            continue
        taken.append(cell)
        r, d = float(cell[0]), float(cell[1])
        if ranges.off_grid:
            r = min(max(r + rng.uniform(-0.5, 0.5), 0.0), N - 1e-9)
            d = min(max(d + rng.uniform(-0.5, 0.5), 0.0), M - 1e-9)
        targets.append(Target(r, d, float(rng.uniform(*ranges.amplitude)), float(rng.uniform(0, 2 * np.pi))))

    def shape_params():
        lo, hi = ranges.burst_width
        width = 2 * _uniform_int(rng, ((lo + 1) // 2, hi // 2))
        slope = float(rng.uniform(*ranges.burst_slope)) * (1 if rng.random() < 0.5 else -1)
        return width, slope, float(rng.uniform(*ranges.burst_frequency))

    bursts = []
    shared = shape_params() if ranges.single_interferer else None
    for _ in range(_uniform_int(rng, ranges.n_bursts)):
        width, slope, freq = shared or shape_params()
        bursts.append(Burst(
            ramp=_uniform_int(rng, (0, M - 1)),
            center=_uniform_int(rng, (width // 2, N - width // 2)),
            width=width,
            chirp_slope=slope,
            amplitude=float(rng.uniform(*ranges.burst_amplitude)),
            phase=float(rng.uniform(0, 2 * np.pi)),
            frequency=freq,
        ))

    return Scene(
        n_samples=N,
        n_ramps=M,
        targets=tuple(targets),
        noise_std=float(rng.uniform(*ranges.noise_std)),
        interference=InterferenceSpec(tuple(bursts)),
        seed=int(rng.integers(0, 2**63)),
    )
