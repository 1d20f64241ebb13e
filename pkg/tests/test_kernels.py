import os
import subprocess
import sys

import numpy as np
import pytest

from qdwstate import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")


def brute_pairs(traj, times, det, max_tau, width, nhalf):
    counts = np.zeros(2 * nhalf, dtype=np.int64)
    for i in range(len(times)):
        for j in range(len(times)):
            if i == j or traj[i] != traj[j] or det[i] == det[j]:
                continue
            tau = times[j] - times[i]
            if abs(tau) > max_tau:
                continue
            k = int(np.floor(abs(tau) / width))
            if k >= nhalf:
                continue
            counts[nhalf + k if tau > 0 or (tau == 0 and j > i) else nhalf - 1 - k] += 1
    return counts


def random_events(seed, n=120):
    rng = np.random.default_rng(seed)
    traj = np.sort(rng.integers(0, 6, n))
    times = np.concatenate([np.sort(rng.random(np.count_nonzero(traj == t)) * 40) for t in range(6)])
    det = rng.integers(0, 2, n)
    return traj, times, det


@pytest.mark.parametrize("backend", [_kernels.NUMPY, pytest.param(_kernels.NUMBA, marks=needs_numba)])
def test_pair_histogram_matches_brute_force(backend):
    traj, times, det = random_events(1)
    got = _kernels.pair_histogram(traj, times, det, 10.0, 0.5, 20, backend=backend)
    assert np.array_equal(got, brute_pairs(traj, times, det, 10.0, 0.5, 20))


@pytest.mark.parametrize("backend", [_kernels.NUMPY, pytest.param(_kernels.NUMBA, marks=needs_numba)])
def test_chain_and_spans(backend):
    rng = np.random.default_rng(2)
    P = (rng.normal(size=(30, 5, 5)) + 1j * rng.normal(size=(30, 5, 5))) / 3
    x0 = rng.normal(size=5).astype(complex)
    xs = _kernels.chain(P, x0, backend=backend)
    ref = x0.copy()
    for n in range(30):
        ref = P[n] @ ref
        assert np.allclose(xs[n + 1], ref)
    starts = np.array([0, 4, 10, 29])
    stops = np.array([5, 4, 30, 30])
    X0 = np.tile(x0, (4, 1))
    out = _kernels.propagate_spans(P, starts, stops, X0, backend=backend)
    for k, (a, b) in enumerate(zip(starts, stops)):
        ref = x0.copy()
        for n in range(a, b):
            ref = P[n] @ ref
        assert np.allclose(out[k], ref)


@needs_numba
def test_backends_identical_on_random_input():
    rng = np.random.default_rng(5)
    P = rng.normal(size=(50, 4, 4)).astype(complex)
    x0 = rng.normal(size=4).astype(complex)
    assert np.allclose(_kernels.chain(P, x0, backend="numpy"), _kernels.chain(P, x0, backend="numba"))


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.resolve("fortran")


def test_numpy_only_switch():
    code = ("import qdwstate._kernels as k; import sys; sys.exit(0 if k.DEFAULT_BACKEND == 'numpy' "
            "and not k.HAVE_NUMBA else 1)")
    proc = subprocess.run([sys.executable, "-c", code], env={**os.environ, "QDWSTATE_NO_NUMBA": "1"})
    assert proc.returncode == 0
