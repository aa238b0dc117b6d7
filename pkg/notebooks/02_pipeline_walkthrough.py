# %% [markdown]
# One snapshot through the chain: IF signal -> RD map -> CA-CFAR -> F1, then a
# short training run of a small denoiser.
# Run with `python3 notebooks/02_pipeline_walkthrough.py` (a few minutes on one core).

# %%
import numpy as np

from qrim import CfarConfig, MatchConfig, ca_cfar, dft_2d, match_and_score, sample_random_scene, synthesize
from qrim.experiment.config import DEFAULT_SCENE, TrainingConfig
from qrim.experiment.dataset import generate_split
from qrim.experiment.training import baseline_scores, evaluate_model, train_model
from qrim.qat import ModelConfig, QuantSpec

# %% a random scene and its interfered twin
scene = sample_random_scene(DEFAULT_SCENE, seed=3)
clean, interfered = synthesize(scene)
print(f"{len(scene.ground_truth)} targets at {scene.ground_truth}, "
      f"{len(scene.interference.bursts)} interference bursts")

# %% range-Doppler maps and detections
cfar = CfarConfig(pfa=1e-5)
for name, sig in (("clean", clean), ("interfered", interfered)):
    mag = np.abs(dft_2d(sig).data)
    det = ca_cfar(mag, cfar)
    s = match_and_score(det, scene.ground_truth, MatchConfig(), shape=mag.shape)
    print(f"{name:10s} detections {len(det):3d}  precision {s.precision:.3f}  recall {s.recall:.3f}  F1 {s.f1:.3f}")

# %% a small dataset drawn from the default scene distribution
train, val, test = (generate_split(DEFAULT_SCENE, n, seed) for n, seed in ((192, 1), (32, 2), (64, 3)))
base = baseline_scores(test, cfar, MatchConfig())
print({k: round(v.f1, 4) for k, v in base.items()})

# %% real-valued and 8-bit L3-C16-B on 48 x 48 crops
# A run this short (192 maps, 20 epochs) still scores below the interfered
# baseline (about 0.78 vs 0.81). The default grid (512 maps, up to 40 epochs,
# `qrim sweep-bits --bits 8 32`) ends about 0.05 above it.
training = TrainingConfig(max_epochs=20, patience=5)
for quant in (QuantSpec(), QuantSpec.uniform(8)):
    res = train_model(ModelConfig.parse("L3-C16-B", quant), train, val, training, seed=0)
    score, _ = evaluate_model(res.model, test, cfar, MatchConfig())
    print(f"{quant.tag:>4s}: F1 {score.f1:.4f} after {res.epochs} epochs, val MSE {min(res.val_loss):.2e}")
