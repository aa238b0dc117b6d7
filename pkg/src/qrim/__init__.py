"""Quantized CNN denoising of interfered FMCW radar range-Doppler maps.

Subpackages and modules:

- :mod:`qrim.radar_sim`  synthetic chirp-sequence snapshots with interference bursts
- :mod:`qrim.rd`         range-Doppler processing (2-D DFT)
- :mod:`qrim.nn`         minimal reverse-mode autodiff and CNN layers
- :mod:`qrim.qat`        quantization-aware training with straight-through gradients
- :mod:`qrim.cfar`       2-D cell-averaging CFAR
- :mod:`qrim.evaluation` detection matching and F1 scores
- :mod:`qrim.resources`  memory and operation budgets
- :mod:`qrim.experiment` datasets, training runs and the CLI back end
"""
from .cfar import CfarConfig, ca_cfar
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (ConfigurationError, DatasetError, DegenerateInputError, NumericsError, QrimError,
                     ShapeError, UsageError)
from .evaluation import MatchConfig, Score, aggregate, match_and_score
from .qat import ModelConfig, QuantSpec, build_model
from .radar_sim import SceneRanges, sample_random_scene, synthesize
from .rd import dft_2d
from .resources import pareto_scan, report

__version__ = "0.1.0"

__all__ = [
    "CfarConfig", "ca_cfar", "load_checkpoint", "save_checkpoint",
    "ConfigurationError", "DatasetError", "DegenerateInputError", "NumericsError", "QrimError",
    "ShapeError", "UsageError", "MatchConfig", "Score", "aggregate", "match_and_score",
    "ModelConfig", "QuantSpec", "build_model", "SceneRanges", "sample_random_scene", "synthesize",
    "dft_2d", "pareto_scan", "report", "__version__",
]
