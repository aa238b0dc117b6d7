"""Experiment configuration and its TOML representation.

Example file::

    output_dir = "runs/default"
    seed = 2024

    [dataset]
    n_train = 512
    n_val = 128
    n_test = 128
    N = 96
    M = 96

    [dataset.scene]          # any SceneRanges field
    n_bursts = [2, 6]

    [training]
    lr = 1e-3
    batch = 8
    max_epochs = 40
    patience = 5
    repeats = 3
    crop = 48                # square training crops; 0 trains on full maps

    [[models]]
    name = "L3-C16-B"
    weight_bits = 8
    act_bits = 8

    [cfar]
    pfa = 1e-5

    [match]
    tolerance_cells = 1
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..cfar import CfarConfig
from ..errors import ConfigurationError
from ..evaluation import MatchConfig
from ..qat import ModelConfig, QuantSpec
from ..radar_sim import SceneRanges

__all__ = [
    "DEFAULT_SCENE", "DatasetConfig", "TrainingConfig", "ExperimentConfig",
    "load_config", "parse_config", "config_hash",
]

# Default synthetic scenes: weak targets in unit-variance noise, hit by a few
# strong chirp bursts per frame. Each burst sweeps through a sizeable part of
# the IF band, so its energy raises the noise floor across all range bins.
DEFAULT_SCENE = SceneRanges(
    n_samples=96,
    n_ramps=96,
    n_targets=(1, 6),
    amplitude=(0.04, 0.4),
    min_separation=4,
    n_bursts=(2, 8),
    burst_width=(16, 48),
    burst_slope=(0.005, 0.05),
    burst_amplitude=(30.0, 80.0),
    noise_std=(1.0, 1.0),
)


@dataclass(frozen=True)
class DatasetConfig:
    n_train: int = 512
    n_val: int = 128
    n_test: int = 128
    N: int = 96
    M: int = 96
    seed: int = 2024
    scene: SceneRanges = DEFAULT_SCENE

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigurationError("every split needs at least one snapshot")
        if (self.scene.n_samples, self.scene.n_ramps) != (self.N, self.M):
            object.__setattr__(self, "scene", replace(self.scene, n_samples=self.N, n_ramps=self.M))
        self.scene.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scene"] = self.scene.to_dict()
        return d


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 1e-3
    batch: int = 8
    max_epochs: int = 40
    patience: int = 5
    repeats: int = 3
    crop: int = 48
    f64: bool = False
    clip_factor: float = 4.0
    # learning rate multiplier after every epoch without validation improvement
    # (1.0 keeps the rate constant; early stopping alone ends training)
    plateau_decay: float = 1.0

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        if self.batch < 2:
            raise ConfigurationError("batch norm training needs batch >= 2")
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigurationError("max_epochs and patience must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be > 0")
        if self.crop < 0:
            raise ConfigurationError("crop must be >= 0")
        if not 0 < self.plateau_decay <= 1:
            raise ConfigurationError("plateau_decay must lie in (0, 1]")


def _default_models() -> tuple[ModelConfig, ...]:
    return (ModelConfig.parse("L3-C16-B"),)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    models: tuple[ModelConfig, ...] = field(default_factory=_default_models)
    cfar: CfarConfig = field(default_factory=lambda: CfarConfig(pfa=1e-5))
    match: MatchConfig = field(default_factory=MatchConfig)
    output_dir: str = "runs/default"
    seed: int = 2024

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if not self.models:
            raise ConfigurationError("the model grid is empty")
        d = self.dataset
        if min(d.n_train, d.n_val, d.n_test) < self.training.batch:
            raise ConfigurationError("every split must hold at least one batch")
        if self.training.crop and self.training.crop > min(d.N, d.M):
            raise ConfigurationError("crop larger than the snapshot")

    @property
    def dtype(self) -> str:
        return "float64" if self.training.f64 else "float32"

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "training": asdict(self.training),
            "models": [_model_to_toml(m) for m in self.models],
            "cfar": self.cfar.to_dict(),
            "match": asdict(self.match),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _model_to_toml(m: ModelConfig) -> dict:
    q = m.quant
    return {"name": m.name, "weight_bits": q.weight_bits, "act_bits": q.act_bits,
            "quantize_io": q.quantize_io, "alpha_scaling": q.alpha_scaling}


def _model_from_toml(d: dict) -> ModelConfig:
    d = dict(d)
    name = d.pop("name", None)
    if name is None:
        raise ConfigurationError("every [[models]] entry needs a name such as 'L3-C16-B'")
    bits = d.pop("bits", None)
    if bits is not None:
        d.setdefault("weight_bits", bits)
        d.setdefault("act_bits", bits)
    try:
        return ModelConfig.parse(name, QuantSpec(**d))
    except TypeError as exc:
        raise ConfigurationError(f"bad model entry {name!r}: {exc}") from exc


def _build(cls, d: dict | None, what: str):
    try:
        return cls(**(d or {}))
    except TypeError as exc:
        raise ConfigurationError(f"bad [{what}] table: {exc}") from exc


def parse_config(data: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed TOML/JSON mapping."""
    data = dict(data)
    known = {"dataset", "training", "models", "cfar", "match", "output_dir", "seed"}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown top-level keys: {sorted(unknown)}")
    ds = dict(data.get("dataset", {}))
    scene_d = ds.pop("scene", None)
    scene = DEFAULT_SCENE
    if scene_d is not None:
        merged = {**DEFAULT_SCENE.to_dict(), **scene_d}
        try:
            scene = SceneRanges.from_dict(merged)
        except TypeError as exc:
            raise ConfigurationError(f"bad [dataset.scene] table: {exc}") from exc
    kw = {}
    if "models" in data:
        kw["models"] = tuple(_model_from_toml(m) for m in data["models"])
    if "cfar" in data:
        kw["cfar"] = _build(CfarConfig, {"pfa": 1e-5, **data["cfar"]}, "cfar")
    for key in ("output_dir", "seed"):
        if key in data:
            kw[key] = data[key]
    return ExperimentConfig(
        dataset=_build(DatasetConfig, {**ds, "scene": scene}, "dataset"),
        training=_build(TrainingConfig, data.get("training"), "training"),
        match=_build(MatchConfig, data.get("match"), "match"),
        **kw,
    )


def load_config(path: str | os.PathLike | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML in {path}: {exc}") from exc
    return parse_config(data)


def config_hash(config: ExperimentConfig) -> str:
    """First 12 hex digits of the SHA-256 of the canonical JSON config (output_dir excluded)."""
    d = config.to_dict()
    d.pop("output_dir")
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
