"""Experiment grids: training repeats, scoring, resource reports and figure data."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..checkpoint import load_checkpoint, save_checkpoint
from ..errors import UsageError
from ..evaluation import SCORE_COLUMNS, Score, aggregate
from ..qat import ModelConfig, QuantSpec
from ..resources import KB, report, reports_csv
from .config import ExperimentConfig, config_hash
from .dataset import Dataset, SPLITS, generate_dataset, load_splits, read_dataset, split_path, write_dataset
from .training import (baseline_scores, denoise, evaluate_model, predict_periodic, score_maps, to_channels,
                       train_model)

__all__ = ["RunRecord", "ExperimentResult", "run_seed", "get_splits", "run_experiment", "sweep_bits_config",
           "infer", "RESULT_COLUMNS", "write_csv"]

RESULT_COLUMNS = SCORE_COLUMNS + ("repeat", "status", "f1_std", "memory_kb", "epochs")


def run_seed(base: int, architecture: str, repeat: int) -> int:
    """Per-run seed from the architecture name (e.g. ``L3-C16-B``) and repeat.

    Quantized variants share the seed of their real-valued twin, so a bit
    sweep compares models with the same initialisation and batch order.
    Independent of grid order and thread scheduling.
    """
    entropy = [base, repeat, *architecture.encode()]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class RunRecord:
    model: ModelConfig
    model_index: int
    repeat: int
    seed: int
    score: Score | None
    status: str
    epochs: int = 0
    checkpoint: str | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    config_hash: str
    runs: list[RunRecord]
    baselines: dict[str, Score] = field(default_factory=dict)
    out_dir: str | None = None

    @property
    def failures(self) -> int:
        return sum(r.status != "ok" for r in self.runs)

    def summary(self) -> dict[ModelConfig, tuple[float, float]]:
        """``ModelConfig -> (mean F1, std F1)`` over successful repeats."""
        out = {}
        for idx, m in enumerate(self.config.models):
            scores = [r.score for r in self.runs if r.model_index == idx and r.score is not None]
            if scores:
                out[m] = aggregate(scores)
        return out

    def rows(self) -> list[dict]:
        h = self.config_hash
        nm = (self.config.dataset.N, self.config.dataset.M)
        rows = []
        for idx, m in enumerate(self.config.models):
            mem = report(m, *nm).total_bytes / KB
            runs = sorted((r for r in self.runs if r.model_index == idx), key=lambda r: r.repeat)
            for r in runs:
                s = r.score
                rows.append({
                    "model_id": m.name, "quant": m.quant.tag,
                    "precision": s.precision if s else "", "recall": s.recall if s else "",
                    "f1": s.f1 if s else "", "tp": s.tp if s else "", "fp": s.fp if s else "",
                    "fn": s.fn if s else "", "seed": r.seed, "config_hash": h, "repeat": r.repeat,
                    "status": r.status, "f1_std": "", "memory_kb": mem, "epochs": r.epochs,
                })
            ok = [r.score for r in runs if r.score is not None]
            if ok:
                mean, std = aggregate(ok)
                rows.append({
                    "model_id": m.name, "quant": m.quant.tag,
                    "precision": float(np.mean([s.precision for s in ok])),
                    "recall": float(np.mean([s.recall for s in ok])), "f1": mean,
                    "tp": sum(s.tp for s in ok), "fp": sum(s.fp for s in ok), "fn": sum(s.fn for s in ok),
                    "seed": self.config.seed, "config_hash": h, "repeat": "mean",
                    "status": f"{len(ok)}/{len(runs)} ok", "f1_std": std, "memory_kb": mem, "epochs": "",
                })
        return rows

    def f1_memory_rows(self) -> list[dict]:
        """F1 versus total memory per configuration."""
        nm = (self.config.dataset.N, self.config.dataset.M)
        out = []
        for m, (mean, std) in self.summary().items():
            out.append({"model": m.name, "quant": m.quant.tag, "weight_bits": m.quant.weight_bits,
                        "act_bits": m.quant.act_bits, "memory_kb": report(m, *nm).total_bytes / KB,
                        "f1_mean": mean, "f1_std": std})
        return out

    def f1_bits_rows(self) -> list[dict]:
        """F1 versus bit-width for configurations with equal weight and activation bits."""
        rows = [r for r in self.f1_memory_rows() if r["weight_bits"] == r["act_bits"]]
        return [{"model": r["model"], "bits": r["weight_bits"], "memory_kb": r["memory_kb"],
                 "f1_mean": r["f1_mean"], "f1_std": r["f1_std"]} for r in sorted(rows, key=lambda r: r["weight_bits"])]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_csv(path: str | None, rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(v) for k, v in row.items()})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def _write_dat(path: str, rows: list[dict], columns) -> None:
    """Whitespace-separated columns with a ``#`` header (gnuplot ``using``)."""
    with open(path, "w") as fh:
        fh.write("# " + " ".join(columns) + "\n")
        for r in rows:
            fh.write(" ".join(str(_fmt(r[c])) for c in columns) + "\n")


def get_splits(config: ExperimentConfig, data_dir: str | None = None) -> dict[str, Dataset]:
    """Read the splits from ``data_dir`` when all three files exist, else generate (and write) them."""
    if data_dir and all(os.path.exists(split_path(data_dir, s)) for s in SPLITS):
        splits = load_splits(data_dir)
        n, m = config.dataset.N, config.dataset.M
        for name, ds in splits.items():
            if ds.shape != (n, m):
                raise UsageError(f"dataset split {name!r} has shape {ds.shape}, config expects {(n, m)}")
        return splits
    return generate_dataset(config.dataset, data_dir)


def run_experiment(config: ExperimentConfig, out_dir: str | None = None, data_dir: str | None = None,
                   threads: int = 1, log=None, save_checkpoints: bool = True) -> ExperimentResult:
    """Train every grid entry ``repeats`` times, score it on the test split and write the CSVs.

    Files written to ``out_dir``: ``results.csv`` (one row per run plus one
    aggregate row per configuration), ``baselines.csv``, ``f1_memory.csv``
    / ``.dat``, ``f1_bits.csv`` / ``.dat``, ``resources.csv`` and
    ``checkpoints/*.qrim``.  Failed runs are recorded and do not stop the grid.
    """
    out_dir = out_dir if out_dir is not None else config.output_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    if data_dir is None and out_dir:
        data_dir = os.path.join(out_dir, "data")
    splits = get_splits(config, data_dir)
    dtype = np.float64 if config.training.f64 else np.float32
    h = config_hash(config)
    ckpt_dir = os.path.join(out_dir, "checkpoints") if out_dir and save_checkpoints else None
    if ckpt_dir:
        os.makedirs(ckpt_dir, exist_ok=True)

    def job(args) -> RunRecord:
        idx, repeat = args
        m = config.models[idx]
        seed = run_seed(config.seed, m.name, repeat)
        res = train_model(m, splits["train"], splits["val"], config.training, seed=seed, dtype=dtype, log=log)
        if res.failed:
            if log:
                log(f"{m.tag} repeat {repeat}: FAILED ({res.reason})")
            return RunRecord(m, idx, repeat, seed, None, "failed", res.epochs)
        score, _ = evaluate_model(res.model, splits["test"], config.cfar, config.match)
        path = None
        if ckpt_dir:
            path = os.path.join(ckpt_dir, f"{m.name}_{m.quant.tag}_r{repeat}.qrim")
            save_checkpoint(res.model, path)
        if log:
            log(f"{m.tag} repeat {repeat}: F1 {score.f1:.4f} after {res.epochs} epochs ({res.seconds:.0f} s)")
        return RunRecord(m, idx, repeat, seed, score, "ok", res.epochs, path)

    jobs = [(i, r) for i in range(len(config.models)) for r in range(config.training.repeats)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(job, jobs))
    else:
        runs = [job(j) for j in jobs]
    runs.sort(key=lambda r: (r.model_index, r.repeat))
    result = ExperimentResult(config, h, runs, baseline_scores(splits["test"], config.cfar, config.match), out_dir)
    if out_dir:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: ExperimentResult, out_dir: str) -> None:
    write_csv(os.path.join(out_dir, "results.csv"), result.rows(), RESULT_COLUMNS)
    base_rows = [{"model_id": f"baseline-{k}", "quant": "-", "precision": s.precision, "recall": s.recall,
                  "f1": s.f1, "tp": s.tp, "fp": s.fp, "fn": s.fn, "seed": result.config.seed,
                  "config_hash": result.config_hash} for k, s in sorted(result.baselines.items())]
    write_csv(os.path.join(out_dir, "baselines.csv"), base_rows, SCORE_COLUMNS)
    f6 = result.f1_memory_rows()
    cols6 = ("model", "quant", "weight_bits", "act_bits", "memory_kb", "f1_mean", "f1_std")
    write_csv(os.path.join(out_dir, "f1_memory.csv"), f6, cols6)
    _write_dat(os.path.join(out_dir, "f1_memory.dat"), f6, cols6)
    f7 = result.f1_bits_rows()
    cols7 = ("model", "bits", "memory_kb", "f1_mean", "f1_std")
    write_csv(os.path.join(out_dir, "f1_bits.csv"), f7, cols7)
    _write_dat(os.path.join(out_dir, "f1_bits.dat"), f7, cols7)
    d = result.config.dataset
    with open(os.path.join(out_dir, "resources.csv"), "w", newline="") as fh:
        fh.write(reports_csv([report(m, d.N, d.M) for m in result.config.models]))


def sweep_bits_config(config: ExperimentConfig, model: str = "L3-C16-B",
                      bits=(1, 2, 4, 6, 8, 32)) -> ExperimentConfig:
    """Grid of one architecture at equal weight/activation bit-widths."""
    base = ModelConfig.parse(model)
    return replace(config, models=tuple(base.with_quant(QuantSpec.uniform(int(b))) for b in bits))


INFER_COLUMNS = ("snapshot", "precision", "recall", "f1", "tp", "fp", "fn")


def infer(checkpoint: str, dataset: str, out_csv: str | None = None, cfar=None, match=None,
          denoised_out: str | None = None) -> tuple[Score, list[Score], str]:
    """Score a saved model on every snapshot of a QRDS file.

    Returns ``(pooled score, per-snapshot scores, csv text)``.  With
    ``denoised_out`` the model outputs (rescaled to the input amplitude) are
    written as a QRDS file whose interfered maps are the denoised ones.
    """
    from ..cfar import CfarConfig
    from ..evaluation import MatchConfig, combine
    cfar = cfar or CfarConfig(pfa=1e-5)
    match = match or MatchConfig()
    model = load_checkpoint(checkpoint)
    ds = read_dataset(dataset)
    if model.input_shape is not None and tuple(model.input_shape) != ds.shape:
        raise UsageError(f"checkpoint expects {tuple(model.input_shape)} snapshots, dataset has {ds.shape}")
    mags = denoise(model, ds.interfered)
    per = score_maps(mags, ds.ground_truth, cfar, match)
    rows = [{"snapshot": i, **{k: s.to_dict()[k] for k in INFER_COLUMNS[1:]}} for i, s in enumerate(per)]
    text = write_csv(out_csv, rows, INFER_COLUMNS)
    if denoised_out is not None:
        x, scale = to_channels(ds.interfered, model.dtype)
        y = predict_periodic(model, x).astype(np.float64)
        maps = (y[:, 0] + 1j * y[:, 1]) * scale[:, None, None]
        write_dataset(Dataset(maps.astype(np.complex64), ds.clean, ds.ground_truth, ds.seed), denoised_out)
    return combine(per), per, text
