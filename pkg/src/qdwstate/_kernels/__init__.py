"""Backend selection for the hot loops.

numba kernels are used when numba imports cleanly and ``QDWSTATE_NO_NUMBA`` is
unset (or "0"). Setting ``QDWSTATE_NO_NUMBA=1`` forces the pure-numpy path.
Both paths consume identical random streams, so they agree trajectory by
trajectory up to floating-point rounding.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from . import vectorized

log = logging.getLogger(__name__)

# allow --threads above the core count; must precede the first numba import
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(os.cpu_count() or 1, 8)))
# prefer OpenMP: the bundled TBB can be too old for numba
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

_jit = None
if os.environ.get("QDWSTATE_NO_NUMBA", "0") in ("", "0"):
    try:
        from . import jit as _jit
    except ImportError:  # pragma: no cover - numba missing
        log.warning("numba unavailable, using the numpy kernels")
        _jit = None

HAVE_NUMBA = _jit is not None
NUMBA, NUMPY = "numba", "numpy"
DEFAULT_BACKEND = NUMBA if HAVE_NUMBA else NUMPY


def resolve(backend: str | None) -> str:
    backend = backend or DEFAULT_BACKEND
    if backend not in (NUMBA, NUMPY):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == NUMBA and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but unavailable (or disabled by QDWSTATE_NO_NUMBA)")
    return backend


def set_threads(n: int) -> int:
    """Thread count for parallel numba loops; returns the count actually used."""
    if HAVE_NUMBA:
        return _jit.set_threads(n)
    return 1


def trajectories(*args, cap: int, backend: str | None = None):
    """Run the trajectory program for every id in ``args[0]``.

    Returns flat ``(row, time, channel)`` arrays sorted by row then time.
    """
    if resolve(backend) == NUMPY:
        return vectorized.trajectories(*args)
    traj_ids = args[0]
    n = len(traj_ids)
    out_t = np.zeros((n, cap))
    out_c = np.zeros((n, cap), dtype=np.int64)
    out_n = np.zeros(n, dtype=np.int64)
    _jit.trajectories(*args, out_t, out_c, out_n)
    over = np.nonzero(out_n > cap)[0]
    if over.size:
        # rerun only the overflowing rows; streams are per trajectory so results are unchanged
        big = int(out_n[over].max())
        t2 = np.zeros((over.size, big))
        c2 = np.zeros((over.size, big), dtype=np.int64)
        n2 = np.zeros(over.size, dtype=np.int64)
        _jit.trajectories(traj_ids[over], *args[1:], t2, c2, n2)
    rows, times, chans = [], [], []
    counts = np.minimum(out_n, cap)
    mask = np.arange(cap)[None, :] < counts[:, None]
    rows_all = np.repeat(np.arange(n), counts)
    times_all = out_t[mask]
    chans_all = out_c[mask]
    if over.size:
        keep = ~np.isin(rows_all, over)
        rows.append(rows_all[keep])
        times.append(times_all[keep])
        chans.append(chans_all[keep])
        m2 = np.arange(t2.shape[1])[None, :] < n2[:, None]
        rows.append(np.repeat(over, n2))
        times.append(t2[m2])
        chans.append(c2[m2])
        row = np.concatenate(rows)
        tt = np.concatenate(times)
        cc = np.concatenate(chans)
        order = np.lexsort((tt, row))
        return row[order], tt[order], cc[order]
    return rows_all, times_all, chans_all


def chain(P, x0, backend: str | None = None):
    if resolve(backend) == NUMPY:
        return vectorized.chain(P, x0)
    return _jit.chain(np.ascontiguousarray(P), np.ascontiguousarray(x0))


def propagate_spans(P, starts, stops, X0, backend: str | None = None):
    starts = np.asarray(starts, dtype=np.int64)
    stops = np.asarray(stops, dtype=np.int64)
    if resolve(backend) == NUMPY:
        return vectorized.propagate_spans(P, starts, stops, X0)
    return _jit.propagate_spans(np.ascontiguousarray(P), starts, stops, np.ascontiguousarray(X0))


def pair_histogram(traj, times, det, max_tau, bin_width, nhalf, backend: str | None = None):
    traj = np.asarray(traj, dtype=np.int64)
    times = np.asarray(times, dtype=float)
    det = np.asarray(det, dtype=np.int64)
    if resolve(backend) == NUMPY:
        return vectorized.pair_histogram(traj, times, det, max_tau, bin_width, nhalf)
    return _jit.pair_histogram(traj, times, det, float(max_tau), float(bin_width), int(nhalf))
