import math

import numpy as np
import pytest
from scipy import stats

from antibunch import streams
from antibunch.errors import CapacityError, OrderingError, ParameterError
from antibunch.streams import DetectorModel, SourceConfig, TagStream, simulate
from antibunch.tagger import cross_correlate

NOISY = DetectorModel(efficiency=(0.8, 0.6), jitter_sigma=50e-12, dark_rate=500.0, dead_time=30e-9)


def _all_sources(duration=12.0):
    return [
        SourceConfig("coherent", coherent_rate=2e3, duration=duration, seed=11, detector=NOISY),
        SourceConfig("pairs", pair_rate=500.0, duration=duration, seed=12, detector=NOISY),
        SourceConfig("antibunched", pair_rate=200.0, duration=duration, seed=13, detector=NOISY,
                     phase_diffusion=0.05),
        SourceConfig("path_entangled", pair_rate=200.0, duration=duration, seed=14, detector=NOISY,
                     phase_diffusion=0.05),
    ]


# -- configuration ------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ParameterError):
        SourceConfig("laser")
    with pytest.raises(ParameterError):
        SourceConfig("pairs", pair_rate=-1)
    with pytest.raises(ParameterError):
        SourceConfig("pairs", duration=0)
    with pytest.raises(ParameterError):
        SourceConfig("pairs", seed=2**64)
    with pytest.raises(ParameterError):
        DetectorModel(efficiency=1.5)
    with pytest.raises(ParameterError):
        DetectorModel(dead_time=-1)


def test_detector_dict_and_scalar_efficiency():
    cfg = SourceConfig("pairs", detector={"efficiency": 0.5, "dark_rate": 10.0})
    assert cfg.detector.efficiency == (0.5, 0.5)
    assert cfg.detector.dark_rate == 10.0


def test_tag_stream_validation():
    with pytest.raises(OrderingError):
        TagStream.single_channel([5, 3], 0, 10)
    with pytest.raises(ValueError):
        TagStream.single_channel([5, 30], 0, 10)
    s = TagStream.single_channel([1, 2, 2], 1, 10)
    assert len(s) == 3 and s.duration == 1e-11
    with pytest.raises(ValueError):
        s.timestamps[0] = 0


def test_antibunched_eta_out_of_range():
    with pytest.raises(ParameterError):
        simulate(SourceConfig("antibunched", pair_rate=1e8, coherence_time=5e-9))


def test_capacity_guard():
    with pytest.raises(CapacityError):
        simulate(SourceConfig("coherent", coherent_rate=1e6, duration=10.0), max_events=1e6)


# -- determinism and ordering ---------------------------------------------------


@pytest.mark.parametrize("cfg", _all_sources(), ids=lambda c: c.source_kind)
def test_deterministic_and_thread_independent(cfg):
    a1, b1 = simulate(cfg)
    a2, b2 = simulate(cfg, threads=3)
    assert a1 == a2 and b1 == b2
    a3, _ = simulate(cfg.replace(seed=cfg.seed + 1))
    assert not a1 == a3


@pytest.mark.parametrize("cfg", _all_sources(duration=2.0), ids=lambda c: c.source_kind)
def test_streams_sorted_in_range_and_labelled(cfg):
    dead = int(round(cfg.detector.dead_time * streams.PS_PER_S))
    for ch, s in enumerate(simulate(cfg)):
        assert s.timestamps.dtype == np.int64
        assert np.all(s.channels == ch)
        assert np.all(np.diff(s.timestamps) >= dead)
        assert s.timestamps.min() >= 0 and s.timestamps.max() <= cfg.duration_ps
        assert s.duration_ps == cfg.duration_ps


# -- dead time -------------------------------------------------------------------


def _dead_time_oracle(t, dead):
    out, last = [], None
    for x in t:
        if last is None or x - last >= dead:
            out.append(x)
            last = x
    return np.array(out, dtype=np.int64)


def test_dead_time_matches_sequential_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        t = np.sort(rng.integers(0, 10_000, rng.integers(0, 400)))
        dead = int(rng.integers(1, 200))
        np.testing.assert_array_equal(streams._apply_dead_time(t, dead), _dead_time_oracle(t, dead))


def test_dead_time_boundary_is_inclusive():
    t = np.array([0, 10, 19, 20, 29, 30])
    np.testing.assert_array_equal(streams._apply_dead_time(t, 10), [0, 10, 20, 30])


# -- rates -----------------------------------------------------------------------


@pytest.mark.parametrize("cfg", _all_sources(duration=4.0), ids=lambda c: c.source_kind)
def test_singles_match_expected_rates(cfg):
    cfg = cfg.replace(detector=DetectorModel((0.8, 0.6), 50e-12, 500.0, 0.0))
    expected = streams.expected_singles_rates(cfg)
    for s, rate in zip(simulate(cfg), expected):
        n = rate * cfg.duration
        assert abs(len(s) - n) <= 4 * math.sqrt(n)


def test_source_amplitudes():
    cfg = SourceConfig("antibunched", pair_rate=200.0, coherence_time=5e-9)
    alpha, eta = streams.source_amplitudes(cfg)
    assert eta == pytest.approx(1e-3)
    assert alpha**2 == pytest.approx(1e-3, rel=1e-3)
    alpha, _ = streams.source_amplitudes(cfg.replace(matched=False, coherent_rate=4e5))
    assert alpha**2 == pytest.approx(2e-3)
    alpha, eta = streams.source_amplitudes(cfg.replace(source_kind="path_entangled"))
    assert alpha**2 == pytest.approx(eta)


def test_bernoulli_indices_statistics():
    rng = np.random.default_rng(1)
    idx = streams._bernoulli_indices(rng, 1_000_000, 0.01)
    assert np.all(np.diff(idx) > 0) and idx[-1] < 1_000_000
    assert abs(idx.size - 10_000) < 4 * math.sqrt(10_000)
    assert streams._bernoulli_indices(rng, 10, 1.0).tolist() == list(range(10))
    assert streams._bernoulli_indices(rng, 10, 0.0).size == 0


def _photons_per_mode(cfg):
    a, b = simulate(cfg)
    t = np.concatenate([a.timestamps, b.timestamps])
    n_modes = cfg.duration_ps // cfg.mode_ps
    per_mode = np.bincount(np.minimum(t // cfg.mode_ps, n_modes - 1), minlength=n_modes)
    return np.bincount(per_mode, minlength=4), n_modes


@pytest.mark.parametrize("offset", [0.0, math.pi])
def test_mode_photon_histogram_chi_square(offset):
    cfg = SourceConfig("antibunched", pair_rate=5e5, coherence_time=5e-9, duration=0.2, seed=21,
                       phase_offset=offset)
    observed, n_modes = _photons_per_mode(cfg)
    p = streams.mode_photon_distribution(cfg)
    expected = n_modes * np.array([p[0], p[1], p[2], p[3:].sum()])
    obs = np.array([observed[0], observed[1], observed[2], observed[3:].sum()])
    keep = expected >= 5
    chi2 = ((obs[keep] - expected[keep]) ** 2 / expected[keep]).sum()
    assert chi2 < stats.chi2.ppf(0.999, keep.sum() - 1)


def test_matched_mode_suppresses_two_photons():
    cfg = SourceConfig("antibunched", pair_rate=5e5, coherence_time=5e-9)
    p = streams.mode_photon_distribution(cfg)
    flipped = streams.mode_photon_distribution(cfg.replace(phase_offset=math.pi))
    assert p[2] < 1e-3 * flipped[2]


def test_path_pair_distribution_normalized_and_cancelled():
    cfg = SourceConfig("path_entangled", pair_rate=200.0, coherence_time=5e-9)
    p = streams.mode_pair_distribution(cfg)
    assert p.sum() == pytest.approx(1, abs=1e-12)
    # alpha = sqrt(|eta|) in floating point, so |1,1> cancels to roundoff
    assert p[1 + streams.PATH_OUTCOMES.index((1, 1))] < 1e-30
    q = streams.mode_pair_distribution(cfg.replace(phase_offset=math.pi))
    assert q[1 + streams.PATH_OUTCOMES.index((1, 1))] > 0


# -- phase drift -----------------------------------------------------------------


def test_phase_trajectory_variance_and_gaussianity():
    d, dur = 0.3, 2.0
    final = np.array([streams.phase_trajectory(d, dur, 0.25, seed).phases[-1] for seed in range(10_000)])
    var = final.var()
    # sampling sd of a variance estimate is var * sqrt(2 / n)
    assert abs(var - d * dur) < 4 * d * dur * math.sqrt(2 / final.size)
    assert abs(stats.kurtosis(final)) < 0.2


def test_phase_trajectory_shape():
    traj = streams.phase_trajectory(0.0, 1.0, 0.1, 3)
    assert traj.times.size == traj.phases.size == 11
    assert np.all(traj.phases == 0)
    with pytest.raises(ParameterError):
        streams.phase_trajectory(1.0, 1.0, 0.0, 3)


def test_bridge_pins_and_variance():
    rng = np.random.default_rng(2)
    length, d = 4e12, 0.5
    t = np.array([0.0, length / 2, length])
    mids = np.array([streams._bridge(rng, t, length, 1.0, 3.0, d) for _ in range(10_000)])
    assert np.allclose(mids[:, 0], 1.0) and np.allclose(mids[:, 2], 3.0)
    # Brownian bridge midpoint: mean (a+b)/2, variance D L / 4
    assert abs(mids[:, 1].mean() - 2.0) < 4 * math.sqrt(0.5 / 10_000)
    assert abs(mids[:, 1].var() - d * 4 / 4) < 4 * 0.5 * math.sqrt(2 / 10_000)


# -- pairs -----------------------------------------------------------------------


def test_pair_jitter_width():
    det = DetectorModel(1.0, 75e-12, 0.0, 0.0)
    cfg = SourceConfig("pairs", pair_rate=2000.0, coherence_time=1e-12, duration=20.0, seed=8, detector=det)
    a, b = simulate(cfg)
    hist = cross_correlate(a, b, 10, 2_000)
    lags = hist.centers
    w = hist.counts.astype(float)
    sigma = math.sqrt((w * lags**2).sum() / w.sum())
    # two independent jitters of 75 ps each plus a 0.42 ps source delay
    expected = math.sqrt(2 * 75.0**2 + 10.0**2 / 12)
    assert sigma == pytest.approx(expected, rel=0.03)
    assert w.sum() == pytest.approx(2000 * 20 / 2, rel=0.05)


# -- path entanglement -------------------------------------------------------------


def _zero_lag_and_background(cfg):
    a, b = simulate(cfg)
    hist = cross_correlate(a, b, 200, 50_100)
    bg = hist.counts[np.abs(hist.centers) > 25_000].mean()
    return hist, float(hist.counts[hist.lags_ps == 0][0]), float(bg)


def test_path_entangled_flipped_zero_lag_is_four_times_accidentals():
    det = DetectorModel(1.0, 0.0, 0.0, 0.0)
    cfg = SourceConfig("path_entangled", pair_rate=200.0, duration=20.0, seed=31, phase_offset=math.pi, detector=det)
    _, zero, bg = _zero_lag_and_background(cfg)
    # |eta + alpha beta|^2 = 4 alpha^4 against alpha^4 for photons from different modes
    assert abs(zero - 4 * bg) <= 3 * math.sqrt(4 * bg)


def test_path_entangled_without_pairs_is_flat():
    det = DetectorModel(1.0, 0.0, 0.0, 0.0)
    cfg = SourceConfig("path_entangled", pair_rate=0.0, coherent_rate=2e5, matched=False, duration=20.0, seed=32,
                       detector=det)
    hist, _, bg = _zero_lag_and_background(cfg)
    g2 = hist.counts / bg
    central = np.abs(hist.centers) <= 5_000
    # the mean over 50 central bins of ~160 counts has a 1% standard error
    assert abs(g2[central].mean() - 1) <= 0.05
