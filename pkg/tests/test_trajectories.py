import math

import numpy as np
import pytest

from qdwstate import _kernels
from qdwstate.core import Channel, HBAR, TBAR, SystemParams, mixed_ground, projector
from qdwstate.dynamics.trajectories import CSV_HEADER, ClickSet, sample_trajectories
from qdwstate.experiments import wstate_sequence
from qdwstate.pulses import PulseSequence

BACKENDS = [_kernels.NUMPY] + ([_kernels.NUMBA] if _kernels.HAVE_NUMBA else [])


def test_free_decay_statistics():
    p = SystemParams(gamma_enh=10, gamma_diag=2)
    n = 20000
    clicks = sample_trajectories(projector(TBAR), PulseSequence(rep_period=5.0), p, n, 11)
    assert np.all(clicks.counts_per_traj() == 1)
    mean = clicks.times.mean()
    assert abs(mean - 1 / 12) < 3 * (1 / 12) / math.sqrt(n)
    frac = np.mean(clicks.channels == int(Channel.ENHANCED))
    q = 10 / 12
    assert abs(frac - q) < 3 * math.sqrt(q * (1 - q) / n)


def test_one_enhanced_click_per_repetition():
    p = SystemParams(gamma_enh=20, gamma_diag=0)
    seq = wstate_sequence("deterministic", 3)
    clicks = sample_trajectories(projector(HBAR), seq, p, 2000, 5, n_reps=4)
    enh = clicks.channel(Channel.ENHANCED)
    rep = np.floor(enh.times / seq.rep_period).astype(np.int64)
    pairs = enh.traj * 4 + rep
    assert np.bincount(pairs).max() <= 1
    # decay during the finite pulses leaves some population behind
    assert 0.85 < len(enh) / (2000 * 4) <= 1


@pytest.mark.parametrize("backend", BACKENDS)
def test_thread_count_does_not_change_output(backend):
    p = SystemParams(gamma_enh=20, gamma_diag=0.8, gamma_sf=0.01)
    seq = wstate_sequence("weak", 3)
    a = sample_trajectories(mixed_ground(), seq, p, 300, 99, n_reps=3, threads=1, backend=backend)
    b = sample_trajectories(mixed_ground(), seq, p, 300, 99, n_reps=3, threads=4, backend=backend)
    assert np.array_equal(a.traj, b.traj) and np.array_equal(a.times, b.times)
    assert np.array_equal(a.channels, b.channels)


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")
def test_backends_agree():
    p = SystemParams(gamma_enh=20, gamma_diag=0.8, gamma_deph=0.2)
    seq = wstate_sequence("weak", 3)
    a = sample_trajectories(mixed_ground(), seq, p, 400, 3, n_reps=2, backend=_kernels.NUMPY)
    b = sample_trajectories(mixed_ground(), seq, p, 400, 3, n_reps=2, backend=_kernels.NUMBA)
    assert np.array_equal(a.traj, b.traj) and np.array_equal(a.channels, b.channels)
    assert np.allclose(a.times, b.times, atol=1e-9)


def test_subsets_are_prefix_stable():
    p = SystemParams()
    seq = wstate_sequence("weak", 2)
    full = sample_trajectories(mixed_ground(), seq, p, 200, 8)
    tail = sample_trajectories(mixed_ground(), seq, p, 100, 8, first_traj=100)
    mask = full.traj >= 100
    assert np.array_equal(full.times[mask], tail.times)


def test_different_seeds_differ():
    p = SystemParams()
    seq = wstate_sequence("weak", 2)
    a = sample_trajectories(mixed_ground(), seq, p, 200, 1)
    b = sample_trajectories(mixed_ground(), seq, p, 200, 2)
    assert not (len(a) == len(b) and np.array_equal(a.times, b.times))


def test_csv_round_trip(tmp_path):
    p = SystemParams()
    clicks = sample_trajectories(mixed_ground(), wstate_sequence("weak", 3), p, 100, 4, n_reps=2)
    path = tmp_path / "clicks.csv"
    clicks.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER) == "traj,time_ns,channel"
    back = ClickSet.from_csv(path, n_traj=100)
    assert np.array_equal(back.traj, clicks.traj)
    assert np.array_equal(back.times, clicks.times)
    assert np.array_equal(back.channels, clicks.channels)


def test_bad_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b,c\n")
    with pytest.raises(ValueError):
        ClickSet.from_csv(path)


def test_argument_checks():
    with pytest.raises(ValueError):
        sample_trajectories(mixed_ground(), PulseSequence(rep_period=1.0), SystemParams(), 0, 1)
    with pytest.raises(ValueError):
        sample_trajectories(mixed_ground(), PulseSequence(rep_period=1.0), SystemParams(), 1, 1, n_reps=0)
    mixed = np.diag([0.5, 0.5, 0, 0]).astype(complex)
    mixed[0, 1] = mixed[1, 0] = 0.2
    with pytest.raises(ValueError):
        sample_trajectories(mixed, PulseSequence(rep_period=1.0), SystemParams(), 1, 1)
