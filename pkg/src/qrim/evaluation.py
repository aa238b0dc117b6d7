"""Detection scoring: greedy matching against ground-truth cells and F1."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .cfar import DetectionList
from .errors import ConfigurationError, UsageError

__all__ = ["MatchConfig", "Score", "match_and_score", "aggregate", "combine", "SCORE_COLUMNS", "score_rows_csv"]


@dataclass(frozen=True)
class MatchConfig:
    tolerance_cells: int = 1
    wrap: bool = False

    def __post_init__(self):
        if self.tolerance_cells < 0:
            raise ConfigurationError(f"tolerance must be >= 0, got {self.tolerance_cells}")


def _f1(precision: float, recall: float) -> float:
    den = precision + recall
    return 2.0 * precision * recall / den if den > 0 else 0.0


@dataclass(frozen=True)
class Score:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        n = self.tp + self.fp
        return self.tp / n if n else 0.0

    @property
    def recall(self) -> float:
        n = self.tp + self.fn
        return self.tp / n if n else 0.0

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)

    def __add__(self, other: "Score") -> "Score":
        return Score(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1, **asdict(self)}


def _distance(a, b, shape, wrap: bool) -> int:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    if wrap and shape is not None:
        dr, dc = min(dr, shape[0] - dr), min(dc, shape[1] - dc)
    return max(dr, dc)


def match_and_score(detections: DetectionList | Iterable, ground_truth: Sequence[tuple[int, int]],
                    config: MatchConfig | None = None, shape: tuple[int, int] | None = None) -> Score:
    """Greedy one-to-one matching.

    Detections are visited by descending magnitude (ties by row, then
    column).  Each one claims the nearest unmatched ground-truth cell within
    ``tolerance_cells`` (Chebyshev), nearest ties again resolved by cell
    order.  ``shape`` is only needed with ``config.wrap``.
    """
    config = config or MatchConfig()
    if not isinstance(detections, DetectionList):
        detections = DetectionList(detections)
    gt = sorted({(int(r), int(c)) for r, c in ground_truth})
    free = set(gt)
    tp = 0
    for det in detections:
        best = None
        for cell in gt:
            if cell not in free:
                continue
            d = _distance((det.row, det.col), cell, shape, config.wrap)
            if d <= config.tolerance_cells and (best is None or d < best[0]):
                best = (d, cell)
        if best is not None:
            free.discard(best[1])
            tp += 1
    return Score(tp=tp, fp=len(detections) - tp, fn=len(gt) - tp)


def combine(scores: Iterable[Score]) -> Score:
    """Micro-average: pool the counts over snapshots."""
    total = Score(0, 0, 0)
    for s in scores:
        total = total + s
    return total


def aggregate(scores: Sequence[Score | float]) -> tuple[float, float]:
    """Mean and sample standard deviation (``n - 1``) of the F1-Scores."""
    if len(scores) == 0:
        raise UsageError("aggregate needs at least one score")
    f1 = np.array([s.f1 if isinstance(s, Score) else float(s) for s in scores])
    std = float(np.std(f1, ddof=1)) if f1.size > 1 else 0.0
    return float(np.mean(f1)), std


SCORE_COLUMNS = ("model_id", "quant", "precision", "recall", "f1", "tp", "fp", "fn", "seed", "config_hash")


def score_rows_csv(rows: Iterable[dict]) -> str:
    """CSV text with :data:`SCORE_COLUMNS`; floats written with ``repr`` precision."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SCORE_COLUMNS, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
