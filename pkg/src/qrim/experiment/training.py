"""Training loop, model evaluation and CFAR baselines."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..cfar import CfarConfig, ca_cfar
from ..checkpoint import checkpoint_bytes, model_from_bytes
from ..errors import NumericsError
from ..evaluation import MatchConfig, Score, combine, match_and_score
from ..nn import Adam, mse_loss
from ..nn.layers import Model
from ..nn.tensor import Tensor
from ..qat import ModelConfig, build_model, clip_auxiliary_weights
from .config import TrainingConfig
from .dataset import Dataset

__all__ = ["to_channels", "prepare", "receptive_radius", "predict_periodic", "TrainResult", "train_model", "denoise", "score_maps", "evaluate_model",
           "baseline_scores"]


def to_channels(maps: np.ndarray, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Complex ``(B, N, M)`` maps -> real ``(B, 2, N, M)`` channels divided by each map's peak magnitude."""
    maps = np.asarray(maps)
    scale = np.abs(maps).reshape(len(maps), -1).max(axis=1).astype(np.float64)
    scale[scale == 0] = 1.0
    ch = np.stack([maps.real, maps.imag], axis=1) / scale[:, None, None, None]
    return ch.astype(dtype), scale


def prepare(ds: Dataset, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Network inputs and regression targets; the clean target shares the interfered map's scale."""
    x, scale = to_channels(ds.interfered, dtype)
    y = np.stack([ds.clean.real, ds.clean.imag], axis=1) / scale[:, None, None, None]
    return x, y.astype(dtype)


@dataclass
class TrainResult:
    model: Model
    failed: bool = False
    reason: str = ""
    epochs: int = 0
    best_epoch: int = 0
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: float = 0.0


def receptive_radius(model: Model) -> int:
    return sum(layer.weight.shape[-1] // 2 for layer in model)


def predict_periodic(model: Model, x: np.ndarray) -> np.ndarray:
    """Model output for ``(B, 2, N, M)`` maps treated as periodic in both axes.

    The maps are wrap-padded by the receptive radius and the output is cut
    back to ``N x M``, so bins at the map edge see their true (wrapped)
    neighbours instead of zero padding.
    """
    r = receptive_radius(model)
    xp = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)), mode="wrap")
    return model.predict(xp)[:, :, r:-r or None, r:-r or None]


def _batched_loss(model: Model, x: np.ndarray, y: np.ndarray, batch: int = 32) -> float:
    total = 0.0
    for i in range(0, len(x), batch):
        out = predict_periodic(model, x[i:i + batch])
        total += float(np.sum((out.astype(np.float64) - y[i:i + batch]) ** 2))
    return total / y.size


def _crop(x: np.ndarray, y: np.ndarray, size: int, rng: np.random.Generator):
    """Random square crops with circular wrap-around.

    RD maps are periodic in both axes, so a crop may straddle the map edge.
    Without wrapping the outermost bins (where DC-band interference lives)
    would appear in only a small fraction of crops.
    """
    if not size or size >= x.shape[-1] and size >= x.shape[-2]:
        return x, y
    B, _, N, M = x.shape
    rows = (rng.integers(0, N, size=B)[:, None] + np.arange(size)) % N
    cols = (rng.integers(0, M, size=B)[:, None] + np.arange(size)) % M
    b = np.arange(B)[:, None, None, None]
    c = np.arange(x.shape[1])[None, :, None, None]
    r_idx, c_idx = rows[:, None, :, None], cols[:, None, None, :]
    return x[b, c, r_idx, c_idx], y[b, c, r_idx, c_idx]


def train_model(config: ModelConfig, train: Dataset, val: Dataset, training: TrainingConfig,
                seed: int = 0, dtype=np.float32, log=None) -> TrainResult:
    """Adam on the MSE between network output and the clean map, with early stopping on validation MSE.

    The learning rate is multiplied by ``plateau_decay`` after every epoch
    that does not improve on the best validation loss.  The returned model
    holds the parameters of the best validation epoch.  A
    non-finite loss ends the run with ``failed=True``.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    model = build_model(config, seed=int(rng.integers(2**31)), dtype=dtype)
    xt, yt = prepare(train, dtype)
    xv, yv = prepare(val, dtype)
    quantized = not config.quant.is_real
    post = (lambda: clip_auxiliary_weights(model, training.clip_factor)) if quantized else None
    opt = Adam(model.parameters(), lr=training.lr, post_step=post)
    result = TrainResult(model)
    best, best_state, stale = math.inf, None, 0
    n = len(xt)
    for epoch in range(1, training.max_epochs + 1):
        model.train()
        order = rng.permutation(n)
        losses = []
        try:
            for i in range(0, n - training.batch + 1, training.batch):
                idx = np.sort(order[i:i + training.batch])
                xb, yb = _crop(xt[idx], yt[idx], training.crop, rng)
                opt.zero_grad()
                loss = mse_loss(model(Tensor(xb)), yb)
                if not np.isfinite(loss.data):
                    raise NumericsError("non-finite training loss")
                loss.backward()
                opt.step()
                losses.append(float(loss.data))
            model.eval()
            vloss = _batched_loss(model, xv, yv)
            if not np.isfinite(vloss):
                raise NumericsError("non-finite validation loss")
        except (NumericsError, FloatingPointError) as exc:
            result.failed, result.reason = True, str(exc)
            break
        result.train_loss.append(float(np.mean(losses)))
        result.val_loss.append(vloss)
        result.epochs = epoch
        if log is not None:
            log(f"{config.tag} epoch {epoch}: train {result.train_loss[-1]:.3e} val {vloss:.3e}")
        if vloss < best:
            best, stale, result.best_epoch = vloss, 0, epoch
            best_state = checkpoint_bytes(model, float_width=8)
        else:
            stale += 1
            if stale >= training.patience:
                break
            opt.state.lr *= training.plateau_decay
    if best_state is not None:
        result.model = model_from_bytes(best_state, dtype=dtype)
    result.model.input_shape = train.shape
    result.model.eval()
    result.seconds = time.perf_counter() - t0
    return result


def denoise(model: Model, maps: np.ndarray, batch: int = 32) -> np.ndarray:
    """Model output magnitudes for complex ``(B, N, M)`` interfered maps (normalised scale)."""
    x, _ = to_channels(maps, model.dtype)
    out = np.empty((len(x),) + x.shape[2:], dtype=np.float64)
    for i in range(0, len(x), batch):
        y = predict_periodic(model, x[i:i + batch]).astype(np.float64)
        out[i:i + batch] = np.hypot(y[:, 0], y[:, 1])
    return out


def score_maps(magnitudes, ground_truth, cfar: CfarConfig, match: MatchConfig) -> list[Score]:
    """CFAR plus matching on every map; one Score per snapshot."""
    return [match_and_score(ca_cfar(m, cfar), gt, match, shape=m.shape)
            for m, gt in zip(magnitudes, ground_truth)]


def evaluate_model(model: Model, ds: Dataset, cfar: CfarConfig, match: MatchConfig) -> tuple[Score, list[Score]]:
    per = score_maps(denoise(model, ds.interfered), ds.ground_truth, cfar, match)
    return combine(per), per


def baseline_scores(ds: Dataset, cfar: CfarConfig, match: MatchConfig) -> dict[str, Score]:
    """CFAR directly on the clean and on the interfered maps."""
    return {
        "clean": combine(score_maps(np.abs(ds.clean), ds.ground_truth, cfar, match)),
        "interfered": combine(score_maps(np.abs(ds.interfered), ds.ground_truth, cfar, match)),
    }
