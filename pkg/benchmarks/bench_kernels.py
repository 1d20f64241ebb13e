"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py --n-traj 20000 --repeat 3

Both backends are timed in one process (the backend is chosen per call);
``QDWSTATE_NO_NUMBA=1`` restricts the run to numpy. Each numba kernel is
called once untimed so JIT compilation is excluded.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from qdwstate import _kernels
from qdwstate.core import SystemParams, mixed_ground
from qdwstate.detection import detector_assignment
from qdwstate.dynamics.master import TimeGrid, build_plan, transfer_matrices, vec
from qdwstate.dynamics.trajectories import sample_trajectories
from qdwstate.experiments import wstate_sequence


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n_traj, n_reps):
    params = SystemParams(gamma_enh=20, gamma_diag=0.8, gamma_deph=0.1)
    seq = wstate_sequence("weak", 3, pulse_duration=0.01)
    rho0 = mixed_ground()

    def traj(backend):
        return lambda: sample_trajectories(rho0, seq, params, n_traj, 1, n_reps=n_reps, backend=backend)

    clicks = sample_trajectories(rho0, seq, params, n_traj, 1, n_reps=n_reps, backend=_kernels.NUMPY)
    det = detector_assignment(clicks, 1)
    nhalf = int(np.ceil(10.5 * seq.rep_period / 0.05))

    def pairs(backend):
        return lambda: _kernels.pair_histogram(clicks.traj, clicks.times, det, nhalf * 0.05, 0.05, nhalf,
                                               backend=backend)

    plan = build_plan(seq, TimeGrid(0.0, seq.rep_period, 0.002))
    P = transfer_matrices(plan, seq, params, 0.0, False)
    x0 = vec(rho0)

    def chain(backend):
        return lambda: _kernels.chain(P, x0, backend=backend)

    return {f"trajectories ({n_traj} x {n_reps} reps)": traj,
            f"pair histogram ({len(clicks)} clicks)": pairs,
            f"propagator chain ({len(P)} steps)": chain}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-traj", type=int, default=20000)
    ap.add_argument("--n-reps", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = [_kernels.NUMPY] + ([_kernels.NUMBA] if _kernels.HAVE_NUMBA else [])
    print(f"{'kernel':<40}" + "".join(f"{b:>12}" for b in backends) + ("     speed-up" if len(backends) > 1 else ""))
    for name, make in cases(args.n_traj, args.n_reps).items():
        row = {}
        for b in backends:
            fn = make(b)
            if b == _kernels.NUMBA:
                fn()  # compile
            row[b] = best_of(fn, args.repeat)
        line = f"{name:<40}" + "".join(f"{row[b]:>11.4f}s" for b in backends)
        if len(backends) > 1:
            line += f"{row[_kernels.NUMPY] / row[_kernels.NUMBA]:>12.1f}x"
        print(line)


if __name__ == "__main__":
    main()
