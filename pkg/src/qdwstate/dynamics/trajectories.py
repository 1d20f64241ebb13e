"""Monte Carlo wavefunction sampling of photon click records.

One repetition period is compiled into a flat op program (free decay,
pulse substeps, resets) that the kernels replay ``n_reps`` times. Every
trajectory draws from its own counter-based stream, so output depends only
on (master_seed, trajectory index).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .. import _kernels
from .._kernels.rng import SALT_DYNAMICS, base_key, stream_keys
from ..core import CLICK_CHANNELS, Channel, H, SystemParams, build_collapse_ops, build_hamiltonian
from ..pulses import RESET_HBAR, PulseSequence, omega_at
from .master import rotation_unitary

FREE, STEP_OP, RESET = 0, 1, 2
CSV_HEADER = ("traj", "time_ns", "channel")
_SUB_MIN = 8
_SUB_RABI = 0.1
_SUB_DECAY = 0.05


@dataclass(frozen=True)
class ClickRecord:
    """Clicks of one trajectory, time-ordered."""

    traj: int
    times: np.ndarray
    channels: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class ClickSet:
    """Flat click table for many trajectories.

    Rows are sorted by trajectory index, then time.
    """

    traj: np.ndarray
    times: np.ndarray
    channels: np.ndarray
    n_traj: int
    seed: int
    duration: float = 0.0  # recorded span per trajectory (ns)

    def __len__(self) -> int:
        return len(self.times)

    def record(self, i: int) -> ClickRecord:
        lo, hi = np.searchsorted(self.traj, [i, i + 1])
        return ClickRecord(i, self.times[lo:hi], self.channels[lo:hi], self.seed)

    def records(self) -> list[ClickRecord]:
        return [self.record(i) for i in range(self.n_traj)]

    def stream_key(self, i: int) -> int:
        return int(stream_keys(base_key(self.seed, SALT_DYNAMICS), [i])[0])

    def select(self, mask: np.ndarray) -> "ClickSet":
        return ClickSet(self.traj[mask], self.times[mask], self.channels[mask], self.n_traj,
                        self.seed, self.duration)

    def channel(self, ch: Channel) -> "ClickSet":
        return self.select(self.channels == int(ch))

    def counts_per_traj(self) -> np.ndarray:
        return np.bincount(self.traj, minlength=self.n_traj)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for tr, t, ch in zip(self.traj.tolist(), self.times.tolist(), self.channels.tolist()):
                w.writerow((tr, f"{t:.17g}", Channel(ch).name))

    @classmethod
    def from_csv(cls, path, n_traj: int | None = None, seed: int = 0) -> "ClickSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if tuple(rows[0]) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {rows[0]}")
        body = rows[1:]
        traj = np.array([int(r[0]) for r in body], dtype=np.int64)
        times = np.array([float(r[1]) for r in body])
        chans = np.array([int(Channel[r[2]]) for r in body], dtype=np.int64)
        n = int(traj.max()) + 1 if n_traj is None and len(traj) else (n_traj or 0)
        return cls(traj, times, chans, n, seed)


@dataclass
class Program:
    kinds: np.ndarray
    t0s: np.ndarray
    t1s: np.ndarray
    args: np.ndarray
    mats: np.ndarray
    energies: np.ndarray
    reset_p: np.ndarray
    reset_tgt: np.ndarray
    jops: np.ndarray
    jclick: np.ndarray


def _heff(params: SystemParams, collapse, omega: complex = 0.0) -> np.ndarray:
    ham = build_hamiltonian(params, omega).astype(complex)
    for op, _ in collapse:
        ham -= 0.5j * op.conj().T @ op
    return ham


def build_program(seq: PulseSequence, params: SystemParams, *, delta_pulses: bool = False) -> Program:
    """Compile one repetition period into kernel ops."""
    collapse = build_collapse_ops(params)
    h0 = _heff(params, collapse)
    if np.max(np.abs(h0 - np.diag(np.diag(h0)))) > 0:
        raise AssertionError("undriven effective Hamiltonian must be diagonal")
    gamma = params.gamma_total + params.gamma_deph + params.gamma_sf

    events = [(r.t0, 0, RESET, i) for i, r in enumerate(seq.resets)]
    events += [(p.center if delta_pulses else p.t0, 1, STEP_OP, i) for i, p in enumerate(seq.pulses)]
    events.sort()

    kinds, t0s, t1s, args, mats = [], [], [], [], []

    def op(kind, a, b, arg):
        kinds.append(kind)
        t0s.append(a)
        t1s.append(b)
        args.append(arg)

    cursor = 0.0
    for t, _, kind, i in events:
        if t > cursor:
            op(FREE, cursor, t, -1)
            cursor = t
        if kind == RESET:
            op(RESET, t, t, i)
            continue
        pulse = seq.pulses[i]
        if delta_pulses:
            mats.append(rotation_unitary(pulse.area, pulse.phase))
            op(STEP_OP, t, t, len(mats) - 1)
            continue
        n = max(_SUB_MIN, math.ceil(pulse.duration * pulse.peak_rabi / _SUB_RABI),
                math.ceil(pulse.duration * gamma / _SUB_DECAY))
        edges = pulse.t0 + pulse.duration * np.arange(n + 1) / n
        mids = 0.5 * (edges[:-1] + edges[1:])
        for a, b, om in zip(edges[:-1], edges[1:], omega_at(seq, mids)):
            mats.append(expm(-1j * _heff(params, collapse, om) * (b - a)))
            op(STEP_OP, a, b, len(mats) - 1)
        cursor = pulse.t1
    if cursor < seq.rep_period:
        op(FREE, cursor, seq.rep_period, -1)

    mats = np.array(mats, dtype=complex).reshape(-1, 4, 4)
    # a static detuning on |h> commutes with the pulse propagators only if |h> is decoupled
    if mats.size and (np.any(mats[:, H, 1:] != 0) or np.any(mats[:, 1:, H] != 0)):
        raise AssertionError("pulse propagators must not couple |h>")
    jops = np.array([c.op for c in collapse], dtype=complex).reshape(-1, 4, 4)
    jclick = np.array([int(c.channel) if c.channel in CLICK_CHANNELS else -1 for c in collapse],
                      dtype=np.int64)
    return Program(
        np.array(kinds, dtype=np.int64), np.array(t0s, dtype=float), np.array(t1s, dtype=float),
        np.array(args, dtype=np.int64), np.ascontiguousarray(mats), np.diag(h0).copy(),
        np.array([r.p_rand for r in seq.resets], dtype=float).reshape(-1),
        np.array([1 if r.target == RESET_HBAR else 0 for r in seq.resets], dtype=np.int64).reshape(-1),
        np.ascontiguousarray(jops), jclick)


def initial_condition(rho0, tol: float = 1e-9):
    """(mode, populations, psi): mode 0 samples basis states, mode 1 is a pure state."""
    rho0 = np.asarray(rho0, dtype=complex)
    off = rho0 - np.diag(np.diag(rho0))
    if np.max(np.abs(off)) <= tol:
        p = np.clip(np.diag(rho0).real, 0.0, None)
        return 0, p / p.sum(), np.zeros(4, dtype=complex)
    w, v = np.linalg.eigh(rho0)
    if w[-1] < 1 - tol:
        raise ValueError("initial state must be diagonal or pure")
    return 1, np.zeros(4), np.ascontiguousarray(v[:, -1])


def sample_trajectories(rho0, seq: PulseSequence, params: SystemParams, n_traj: int, master_seed: int, *,
                        n_reps: int = 1, threads: int | None = None, delta_pulses: bool = False,
                        backend: str | None = None, first_traj: int = 0) -> ClickSet:
    """Sample ``n_traj`` click records over ``n_reps`` repetitions of ``seq``.

    ENHANCED and DIAGONAL jumps are recorded; dephasing and spin-flip jumps
    are silent. In quasi-static mode each trajectory carries its own static
    detuning drawn from Normal(0, sigma_quasistatic). Same seed, same output,
    whatever the thread count or backend.
    """
    if n_traj <= 0:
        raise ValueError("n_traj must be >= 1")
    if n_reps <= 0:
        raise ValueError("n_reps must be >= 1")
    if threads is not None:
        _kernels.set_threads(threads)
    prog = build_program(seq, params, delta_pulses=delta_pulses)
    mode, init_p, init_psi = initial_condition(rho0)
    sigma = params.sigma_quasistatic if params.dephasing_mode == "quasistatic" else 0.0
    ids = np.arange(first_traj, first_traj + n_traj, dtype=np.int64)
    cap = max(16, 2 * n_reps * (seq.d + 2))
    row, t, c = _kernels.trajectories(
        ids, base_key(master_seed, SALT_DYNAMICS), mode, init_p, init_psi, prog.kinds, prog.t0s,
        prog.t1s, prog.args, prog.mats, prog.energies, prog.reset_p, prog.reset_tgt, prog.jops,
        prog.jclick, float(sigma), int(n_reps), float(seq.rep_period), cap=cap, backend=backend)
    return ClickSet(np.asarray(row, dtype=np.int64) + first_traj, np.asarray(t, dtype=float),
                    np.asarray(c, dtype=np.int64), first_traj + n_traj, master_seed,
                    n_reps * seq.rep_period)
