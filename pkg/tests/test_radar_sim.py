import numpy as np
import pytest
from hypothesis import given, strategies as st

from qrim.cfar import CfarConfig, ca_cfar
from qrim.errors import ConfigurationError
from qrim.radar_sim import (Burst, InterferenceSpec, Scene, SceneRanges, Target, add_interference,
                            burst_waveform, sample_random_scene, synthesize, synthesize_clean)
from qrim.rd import dft_2d


def test_empty_scene_is_zero():
    s = synthesize_clean(Scene(16, 16))
    assert s.data.shape == (16, 16)
    assert not np.any(s.data)


def test_single_target_peak_value():
    scene = Scene(16, 16, targets=[Target(5, 3, 1.0, 0.0)])
    rd = np.abs(dft_2d(synthesize_clean(scene)).data)
    assert np.unravel_index(np.argmax(rd), rd.shape) == (5, 3)
    assert rd[5, 3] == pytest.approx(256.0, abs=1e-9)
    rd[5, 3] = 0
    assert rd.max() < 1e-9


def test_target_signal_matches_double_loop():
    t = Target(2, 7, 0.7, 1.1)
    s = synthesize_clean(Scene(8, 12, targets=[t])).data
    ref = np.empty((8, 12), complex)
    for n in range(8):
        for m in range(12):
            ref[n, m] = 0.7 * np.exp(1j * (2 * np.pi * (2 * n / 8 + 7 * m / 12) + 1.1))
    np.testing.assert_allclose(s, ref, atol=1e-12)


def test_noise_power():
    s = synthesize_clean(Scene(64, 64, noise_std=0.1, seed=11)).data
    assert np.mean(np.abs(s) ** 2) == pytest.approx(2 * 0.1**2, rel=0.05)


def test_linearity_of_targets():
    a = (Target(1, 2, 1.0, 0.3),)
    b = (Target(9, 4, 0.5, 2.0), Target(3, 3, 2.0, 1.0))
    s_ab = synthesize_clean(Scene(16, 16, targets=a + b)).data
    s_a = synthesize_clean(Scene(16, 16, targets=a)).data
    s_b = synthesize_clean(Scene(16, 16, targets=b)).data
    np.testing.assert_allclose(s_ab, s_a + s_b, atol=1e-12)


def test_determinism():
    sc = Scene(32, 32, targets=[Target(4, 4)], noise_std=1.0, seed=5,
               interference=InterferenceSpec([Burst(3, 16, 10, 0.01, 5.0)]))
    c1, x1 = synthesize(sc)
    c2, x2 = synthesize(sc)
    assert np.array_equal(c1.data, c2.data) and np.array_equal(x1.data, x2.data)


def test_empty_and_zero_bursts_are_identity():
    clean = synthesize_clean(Scene(16, 16, targets=[Target(1, 1)], noise_std=0.5, seed=2))
    assert np.array_equal(add_interference(clean, InterferenceSpec()).data, clean.data)
    zero = InterferenceSpec([Burst(2, 8, 8, 0.1, 0.0)])
    assert np.array_equal(add_interference(clean, zero).data, clean.data)


def test_burst_raises_mean_rd_magnitude():
    clean = synthesize_clean(Scene(128, 32, noise_std=1.0, seed=3))
    x = add_interference(clean, InterferenceSpec([Burst(10, 64, 64, 0.02, 5.0)]))
    assert np.abs(dft_2d(x).data).mean() > np.abs(dft_2d(clean).data).mean()


def test_burst_waveform_shape():
    b = Burst(0, 10, 8, 0.05, 2.0, phase=0.3)
    w = burst_waveform(b)
    k = np.arange(8)
    taper = np.sin(np.pi * (k + 0.5) / 8) ** 2
    ref = 2.0 * taper * np.exp(1j * (np.pi * 0.05 * (k - 4) ** 2 + 0.3))
    np.testing.assert_allclose(w, ref, atol=1e-12)
    assert np.all(np.abs(w) <= 2.0)


@given(ramp=st.integers(0, 15), width=st.integers(1, 8).map(lambda v: 2 * v), data=st.data())
def test_burst_changes_only_its_column(ramp, width, data):
    center = data.draw(st.integers(width // 2, 16 - width // 2))
    clean = synthesize_clean(Scene(16, 16, targets=[Target(3, 4)], noise_std=1.0, seed=1))
    x = add_interference(clean, InterferenceSpec([Burst(ramp, center, width, 0.1, 3.0)]))
    diff = np.abs(x.data - clean.data) > 0
    assert not np.any(np.delete(diff, ramp, axis=1))
    rows = np.nonzero(diff[:, ramp])[0]
    assert rows.min() >= center - width // 2 and rows.max() < center + width // 2


@pytest.mark.parametrize("burst", [
    Burst(0, 2, 8, 0.01, 1.0),       # starts before sample 0
    Burst(0, 14, 8, 0.01, 1.0),      # ends after sample N
    Burst(16, 8, 8, 0.01, 1.0),      # ramp out of range
    Burst(0, 8, 7, 0.01, 1.0),       # odd width
    Burst(0, 8, 8, 0.6, 1.0),        # slope outside (-0.5, 0.5)
    Burst(0, 8, 8, 0.01, -1.0),
])
def test_burst_out_of_bounds(burst):
    clean = synthesize_clean(Scene(16, 16))
    with pytest.raises(ConfigurationError):
        add_interference(clean, InterferenceSpec([burst]))


def test_invalid_scene():
    with pytest.raises(ConfigurationError):
        synthesize_clean(Scene(4, 16))
    with pytest.raises(ConfigurationError):
        synthesize_clean(Scene(16, 16, noise_std=-1))
    with pytest.raises(ConfigurationError):
        synthesize_clean(Scene(16, 16, targets=[Target(16, 0)]))


def test_degenerate_ranges():
    r = SceneRanges(16, 16, n_targets=(1, 1), range_bins=(0, 0), doppler_bins=(0, 0))
    sc = sample_random_scene(r, 0)
    assert [t.cell for t in sc.targets] == [(0, 0)]


def test_sample_same_seed_same_scene():
    r = SceneRanges(32, 32, n_targets=(1, 5), n_bursts=(1, 4), burst_width=(4, 16))
    assert sample_random_scene(r, 42) == sample_random_scene(r, 42)
    assert sample_random_scene(r, 42) != sample_random_scene(r, 43)


def test_mean_target_count():
    r = SceneRanges(16, 16, n_targets=(1, 5))
    rng = np.random.default_rng(0)
    counts = [len(sample_random_scene(r, int(s)).targets) for s in rng.integers(0, 2**62, 10_000)]
    assert np.mean(counts) == pytest.approx(3.0, abs=0.1)


def test_impossible_ranges():
    with pytest.raises(ConfigurationError):
        sample_random_scene(SceneRanges(8, 8, n_targets=(65, 65)), 0)
    with pytest.raises(ConfigurationError):
        sample_random_scene(SceneRanges(16, 16, n_targets=(3, 1)), 0)
    with pytest.raises(ConfigurationError):
        sample_random_scene(SceneRanges(16, 16, n_targets=(20, 20), min_separation=8), 0)


@given(seed=st.integers(0, 2**32))
def test_sampled_targets_distinct_and_separated(seed):
    r = SceneRanges(32, 32, n_targets=(1, 6), min_separation=4, n_bursts=(0, 3), burst_width=(4, 16))
    sc = sample_random_scene(r, seed)
    sc.validate()
    cells = [t.cell for t in sc.targets]
    assert len(set(cells)) == len(cells)
    for i, a in enumerate(cells):
        for b in cells[i + 1:]:
            dr, dd = abs(a[0] - b[0]), abs(a[1] - b[1])
            assert max(min(dr, 32 - dr), min(dd, 32 - dd)) >= 4


def test_single_interferer_shares_shape():
    r = SceneRanges(32, 32, n_bursts=(4, 4), burst_width=(4, 16), burst_frequency=(-0.2, 0.2),
                    single_interferer=True)
    sc = sample_random_scene(r, 7)
    shapes = {(b.width, b.chirp_slope, b.frequency) for b in sc.interference.bursts}
    assert len(shapes) == 1


@given(seed=st.integers(0, 2**32))
def test_ground_truth_soundness(seed):
    # noiseless, interference-free maps: CFAR finds exactly the targets
    r = SceneRanges(32, 32, n_targets=(1, 4), amplitude=(1.0, 5.0), min_separation=4, noise_std=(0.0, 0.0))
    sc = sample_random_scene(r, seed)
    mag = np.abs(dft_2d(synthesize_clean(sc)).data)
    found = sorted(ca_cfar(mag, CfarConfig(train_cells=4, guard_cells=2)).positions)
    assert found == sc.ground_truth


def test_scene_dict_round_trip():
    sc = sample_random_scene(SceneRanges(32, 32, n_bursts=(2, 2), burst_width=(4, 8)), 3)
    assert Scene.from_dict(sc.to_dict()) == sc
