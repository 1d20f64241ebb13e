import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdwstate.core import Channel
from qdwstate.detection import (CorrelationHistogram, Histogram, UMIConfig, apply_detector, fold, g2_estimate,
                                hbt_correlate, side_peak_profile, temporal_filter, time_resolved_histogram,
                                umi_intensity, umi_phase_scan, visibility, window_counts)
from qdwstate.dynamics.correlations import G1Series
from qdwstate.dynamics.master import OffGridError
from qdwstate.dynamics.trajectories import ClickSet

PERIOD = 12.5


def clickset(traj, times, n_traj, chans=None):
    traj = np.asarray(traj, dtype=np.int64)
    times = np.asarray(times, dtype=float)
    order = np.lexsort((times, traj))
    chans = np.zeros(len(times), dtype=np.int64) if chans is None else np.asarray(chans, dtype=np.int64)
    return ClickSet(traj[order], times[order], chans[order], n_traj, 0, PERIOD * 100)


def poisson_clicks(rate, n_traj=200, reps=100, seed=0):
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate, (n_traj, reps))
    traj = np.repeat(np.arange(n_traj), n.sum(axis=1))
    rep = np.repeat(np.tile(np.arange(reps), n_traj), n.ravel())
    return clickset(traj, rep * PERIOD + 1 + rng.random(traj.size), n_traj)


def test_fold():
    assert fold(np.array([14.5]), PERIOD)[0] == pytest.approx(2.0)
    assert np.all(fold(np.array([0.0, 12.5, 25.0]), PERIOD) == 0)


def test_time_resolved_histogram():
    c = clickset([0, 0, 1], [0.5, 13.0, 1.26], 2, [0, 1, 0])
    h = time_resolved_histogram(c, Channel.ENHANCED, 0.25, PERIOD)
    assert h.counts.sum() == 2 and h.counts[2] == 1 and h.counts[5] == 1
    assert time_resolved_histogram(c, None, 0.25, PERIOD).counts.sum() == 3
    with pytest.raises(ValueError):
        time_resolved_histogram(c, bin_width=0)


def test_histogram_validation():
    with pytest.raises(ValueError):
        Histogram([0, 1, 1], [1, 2])
    with pytest.raises(ValueError):
        Histogram([0, 1, 2], [1])


def test_filter_identity_and_empty():
    c = poisson_clicks(0.3, 20, 10)
    full = temporal_filter(c, [(0.0, PERIOD)], PERIOD)
    assert np.array_equal(full.times, c.times)
    empty = temporal_filter(c, [(5.0, 6.0)], PERIOD)
    assert len(empty) == 0 and empty.n_traj == c.n_traj
    none = temporal_filter(clickset([], [], 3), [(0.0, 1.0)], PERIOD)
    assert len(none) == 0


def test_filter_windows_validated():
    c = poisson_clicks(0.1, 5, 5)
    with pytest.raises(ValueError):
        temporal_filter(c, [(0, 2), (1, 3)], PERIOD)
    with pytest.raises(ValueError):
        temporal_filter(c, [(2, 1)], PERIOD)


def test_window_counts_exact():
    c = clickset([0, 0, 0], [1.0, 1.5, 14.0], 1)
    assert window_counts(c, [(1.0, 1.5), (1.5, 2.0)], PERIOD).tolist() == [1.0, 2.0]


def test_poisson_source_has_unit_g2():
    c = poisson_clicks(0.4, 300, 60, seed=1)
    corr = hbt_correlate(c, 11 * PERIOD, 0.5, seed=3, record_span=60 * PERIOD)
    est = g2_estimate(corr, PERIOD)
    assert abs(est.value - 1) < 4 * est.stderr


def test_single_emitter_has_empty_central_peak():
    n, reps = 50, 40
    traj = np.repeat(np.arange(n), reps)
    times = np.tile(np.arange(reps) * PERIOD + 1.0, n)
    corr = hbt_correlate(clickset(traj, times, n), 11 * PERIOD, 0.5, seed=0)
    est = g2_estimate(corr, PERIOD)
    assert est.value == 0 and est.central == 0 and est.stderr > 0
    prof = side_peak_profile(corr, PERIOD, 3)
    assert prof[0] == 0 and prof[1] > 0


@given(st.integers(0, 2 ** 32))
def test_correlation_symmetric(seed):
    c = poisson_clicks(0.5, 10, 12, seed=seed % 1000)
    corr = hbt_correlate(c, 3 * PERIOD, 0.25, seed=seed)
    assert np.array_equal(corr.raw, corr.raw[::-1])


def test_record_span_correction():
    c = poisson_clicks(0.5, 30, 20)
    corr = hbt_correlate(c, 5 * PERIOD, 0.5, record_span=20 * PERIOD)
    assert np.all(corr.counts >= corr.raw)
    with pytest.raises(ValueError):
        hbt_correlate(c, 5 * PERIOD, 0.5, record_span=PERIOD)


def test_far_range_must_fit():
    c = poisson_clicks(0.3, 10, 10)
    corr = hbt_correlate(c, 3 * PERIOD, 0.5)
    with pytest.raises(ValueError):
        g2_estimate(corr, PERIOD)


def test_detector_model():
    c = poisson_clicks(1.0, 100, 20)
    assert len(apply_detector(c)) == len(c)
    lossy = apply_detector(c, efficiency=0.5, seed=2)
    assert abs(len(lossy) / len(c) - 0.5) < 0.05
    bg = apply_detector(clickset([], [], 100), background_rate=0.5, background_window=(10.0, 11.0), seed=1)
    ft = fold(bg.times, PERIOD)
    assert np.all((ft >= 10) & (ft <= 11)) and len(bg) > 0
    with pytest.raises(ValueError):
        apply_detector(c, efficiency=1.5)


def two_bin_series(c1, c2, delay=1.0, dt=0.01):
    """Coherent photon split over two square bins of width 0.5 separated by ``delay``."""
    t = np.round(np.arange(0, 3.0 + dt / 2, dt), 10)
    f = ((t >= 0) & (t < 0.5)).astype(float) / 0.5
    g = ((t >= delay) & (t < delay + 0.5)).astype(float) / 0.5
    inten = abs(c1) ** 2 * f + abs(c2) ** 2 * g
    g1 = np.conj(c1) * c2 * f
    return G1Series(t, inten, g1.astype(complex), delay, dt)


def test_umi_phases():
    s = two_bin_series(1 / math.sqrt(2), 1 / math.sqrt(2))
    middle = (1.0, 1.5)
    out = umi_phase_scan(s, [0.0, math.pi], middle)
    assert out[0] == pytest.approx(0.5, abs=0.02)
    assert out[1] == pytest.approx(0.0, abs=0.02)
    # edge bins see a single arm only
    early, late = umi_phase_scan(s, [0.0], (0.0, 0.5)), umi_phase_scan(s, [0.0], (2.0, 2.5))
    assert early[0] == pytest.approx(0.125, abs=0.01) and late[0] == pytest.approx(0.125, abs=0.01)


def test_umi_delay_must_match():
    s = two_bin_series(1, 1)
    with pytest.raises(OffGridError):
        umi_intensity(s, UMIConfig(0.7))
    with pytest.raises(ValueError):
        UMIConfig(0.0)


def test_visibility_of_coherent_pair():
    s = two_bin_series(0.6, 0.8)
    phases = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    scan = np.column_stack([phases, umi_phase_scan(s, phases, (1.0, 1.5))])
    v = visibility(scan)
    assert v.V == pytest.approx(2 * 0.6 * 0.8, abs=0.02)
    assert '"V"' in v.to_json()
    with pytest.raises(ValueError):
        visibility(phases)


def test_correlation_csv(tmp_path):
    corr = CorrelationHistogram(np.array([-1.0, 0.0, 1.0]), np.array([2.0, 3.0]), np.array([2.0, 3.0]))
    corr.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "bin_start_ns,bin_end_ns,value" and lines[1] == "-1,0,2"
