"""Fixed-step RK4 integration of the Lindblad master equation.

The generator is assembled once as a 16x16 superoperator (row-major
vectorisation, vec(A X B) = (A kron B^T) vec X). Because it is linear in the
drive, every RK4 step collapses to a transfer matrix P_n; instantaneous
events (resets, idealised delta pulses) are folded into the step that starts
at their time. Evolution and regression both reuse the same P_n list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .. import _kernels
from ..core import (EXCITED, GROUND, HBAR, TBAR, Channel, SystemParams, build_collapse_ops,
                    build_hamiltonian, projector)
from ..pulses import RESET_HBAR, PulseSequence, ResetPulse, omega_at

STEP_RATE_LIMIT = 0.1
FINE_STEP_RATE = 0.02
GH_NODES = 24
_I4 = np.eye(4, dtype=complex)
_I16 = np.eye(16, dtype=complex)


class StepSizeError(ValueError):
    """The base step does not resolve the fastest rate of the model."""


class NumericalError(ArithmeticError):
    pass


class PositivityError(NumericalError):
    pass


class OffGridError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Integration window and base step (ns).

    ``align_delay`` makes the step plan invariant under shifts by that delay,
    so that t and t + delay are both grid points (needed by the
    interferometer and multi-bin coherences).
    """

    t_start: float
    t_end: float
    dt: float
    align_delay: float | None = None

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0 (got {self.dt})")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        if (self.t_end - self.t_start) / self.dt > 1e7:
            raise ValueError("grid would need more than 1e7 steps")
        if self.align_delay is not None and not self.align_delay > 0:
            raise ValueError("align_delay must be > 0")


# -- superoperators -----------------------------------------------------------

def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho, dtype=complex).reshape(-1)


def unvec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).reshape(x.shape[:-1] + (4, 4))


def commutator_super(ham: np.ndarray) -> np.ndarray:
    return -1j * (np.kron(ham, _I4) - np.kron(_I4, ham.T))


def dissipator_super(op: np.ndarray) -> np.ndarray:
    ldl = op.conj().T @ op
    return np.kron(op, op.conj()) - 0.5 * np.kron(ldl, _I4) - 0.5 * np.kron(_I4, ldl.T)


def liouvillian(ham: np.ndarray, collapse) -> np.ndarray:
    out = commutator_super(ham)
    for op, _ in collapse:
        out = out + dissipator_super(op)
    return out


def map_super(fn) -> np.ndarray:
    """16x16 matrix of a linear map on 4x4 matrices."""
    out = np.empty((16, 16), dtype=complex)
    for k in range(16):
        basis = np.zeros(16, dtype=complex)
        basis[k] = 1.0
        out[:, k] = vec(fn(unvec(basis)))
    return out


def reset_super(reset: ResetPulse) -> np.ndarray:
    """rho -> (1-p) rho + p [P_e rho P_e + Tr(P_g rho) sigma_target]."""
    pg = projector(GROUND[0]) + projector(GROUND[1])
    pe = projector(EXCITED[0]) + projector(EXCITED[1])
    target = projector(HBAR) if reset.target == RESET_HBAR else 0.5 * pg
    p = reset.p_rand

    def apply(rho):
        return (1 - p) * rho + p * (pe @ rho @ pe + np.trace(pg @ rho) * target)

    return map_super(apply)


def rotation_unitary(area: float, phase: float) -> np.ndarray:
    """exp(-i area/2 (e^{i phase}|Tbar><hbar| + h.c.)), the delta-pulse limit."""
    gen = np.exp(1j * phase) * projector(TBAR, HBAR)
    gen = gen + gen.conj().T
    return expm(-0.5j * area * gen)


def rotation_super(area: float, phase: float) -> np.ndarray:
    u = rotation_unitary(area, phase)
    return np.kron(u, u.conj())


def drive_supers(params: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Generator pieces multiplying Re(Omega) and Im(Omega)."""
    h_re = build_hamiltonian(params.with_(delta_drive=0.0), 1.0)
    h_im = build_hamiltonian(params.with_(delta_drive=0.0), 1.0j)
    return commutator_super(h_re), commutator_super(h_im)


def quasistatic_nodes(params: SystemParams, n_nodes: int = GH_NODES):
    """Gauss-Hermite detunings and weights for the static-noise average."""
    if params.dephasing_mode != "quasistatic" or params.sigma_quasistatic == 0:
        return np.zeros(1), np.ones(1)
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    return params.sigma_quasistatic * x, w / w.sum()


def rate_scale(params: SystemParams, extra_detuning: float = 0.0) -> float:
    return max(params.gamma_total, abs(params.delta_drive), params.gamma_deph,
               params.gamma_sf, abs(extra_detuning))


# -- step plan --------------------------------------------------------------------

@dataclass
class StepPlan:
    times: np.ndarray                       # N + 1 grid points
    events: dict = field(default_factory=dict)  # step index -> 16x16 event map

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.times)

    def index_of(self, t, tol: float = 1e-9) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.times, t), 1, len(self.times) - 1)
        left = idx - 1
        pick = np.where(np.abs(self.times[left] - t) <= np.abs(self.times[idx] - t), left, idx)
        bad = np.abs(self.times[pick] - t) > tol * max(1.0, float(np.max(np.abs(t))))
        if np.any(bad):
            raise OffGridError(f"time {t[bad][0]:.12g} ns is not a grid point")
        return pick


def _merge(points: np.ndarray, tol: float) -> np.ndarray:
    points = np.sort(points)
    keep = np.concatenate([[True], np.diff(points) > tol])
    return points[keep]


def build_plan(seq: PulseSequence, grid: TimeGrid, *, delta_pulses: bool = False,
               extra_points=(), fine_rate: float = FINE_STEP_RATE) -> StepPlan:
    t0, t1, period = grid.t_start, grid.t_end, seq.rep_period
    tol = 1e-12 * max(1.0, abs(t0), abs(t1))
    reps = range(math.floor(t0 / period) - 1, math.ceil(t1 / period) + 1)
    points = [t0, t1, *extra_points]
    fine = []
    events = []  # (time, matrix)
    for r in reps:
        base = r * period
        for rs in seq.resets:  # resets act before a pulse starting at the same instant
            points.append(base + rs.t0)
            events.append((base + rs.t0, reset_super(rs)))
        for p in seq.pulses:
            if delta_pulses:
                points.append(base + p.center)
                events.append((base + p.center, rotation_super(p.area, p.phase)))
            else:
                points += [base + p.t0, base + p.t1]
                fine.append((base + p.t0, base + p.t1))
    points = np.asarray(points, dtype=float)
    points = points[(points >= t0 - tol) & (points <= t1 + tol)]
    fine = np.asarray(fine, dtype=float).reshape(-1, 2)
    fine = np.clip(fine[(fine[:, 1] > t0) & (fine[:, 0] < t1)], t0, t1)

    if grid.align_delay is not None:
        # close the in-window breakpoints and refined intervals under shifts by the delay
        d = grid.align_delay
        kmax = int(math.ceil((t1 - t0) / d)) + 1
        shifts = d * np.arange(-kmax, kmax + 1)
        points = (points[:, None] + shifts[None, :]).ravel()
        fine = (fine[:, None, :] + shifts[None, :, None]).reshape(-1, 2)

    points = points[(points >= t0 - tol) & (points <= t1 + tol)]
    points = _merge(np.clip(points, t0, t1), tol)
    points[0], points[-1] = t0, t1
    fine = fine[(fine[:, 1] > t0) & (fine[:, 0] < t1)]

    h_fine = grid.dt
    if seq.peak_rabi > 0 and not delta_pulses:
        h_fine = min(grid.dt, fine_rate / seq.peak_rabi)

    chunks = []
    for a, b in zip(points[:-1], points[1:]):
        mid = 0.5 * (a + b)
        in_fine = bool(np.any((fine[:, 0] <= mid) & (mid <= fine[:, 1]))) if fine.size else False
        step = h_fine if in_fine else grid.dt
        n = max(1, int(math.ceil((b - a) / step - 1e-9)))
        chunks.append(a + (b - a) * np.arange(n) / n)
    times = np.concatenate(chunks + [[t1]])

    plan = StepPlan(times)
    for t_ev, mat in events:
        if t_ev < t0 - tol or t_ev >= t1 - tol:
            continue
        n = int(plan.index_of(t_ev)[0])
        plan.events[n] = mat @ plan.events[n] if n in plan.events else mat
    return plan


def check_step_size(params: SystemParams, grid: TimeGrid, detuning: float = 0.0) -> None:
    rate = rate_scale(params, detuning)
    if grid.dt * rate >= STEP_RATE_LIMIT:
        raise StepSizeError(
            f"dt={grid.dt:g} ns does not resolve the fastest rate {rate:.4g}/ns "
            f"(need dt*rate < {STEP_RATE_LIMIT}, i.e. dt < {STEP_RATE_LIMIT / rate:.4g} ns)")


def transfer_matrices(plan: StepPlan, seq: PulseSequence, params: SystemParams,
                      detuning: float = 0.0, delta_pulses: bool = False, *,
                      fold_events: bool = True) -> np.ndarray:
    """RK4 transfer matrix of every step; events are folded in unless ``fold_events`` is False."""
    collapse = build_collapse_ops(params)
    ham0 = build_hamiltonian(params) + detuning * projector(GROUND[0])
    l0 = liouvillian(ham0, collapse)
    a_re, a_im = drive_supers(params)
    t = plan.times[:-1]
    h = plan.h
    n = len(h)
    # one-sided limits at both step ends: pulse edges coincide with grid points up to rounding
    eps = 1e-6 * h

    def gen(times):
        if delta_pulses or not seq.pulses:
            return np.broadcast_to(l0, (n, 16, 16))
        om = omega_at(seq, times)
        return l0[None] + om.real[:, None, None] * a_re[None] + om.imag[:, None, None] * a_im[None]

    g1 = gen(t + eps)
    g2 = gen(t + 0.5 * h)
    g4 = gen(t + h - eps)
    hh = h[:, None, None]
    eye = _I16[None]
    k1 = g1
    k2 = g2 @ (eye + 0.5 * hh * k1)
    k3 = g2 @ (eye + 0.5 * hh * k2)
    k4 = g4 @ (eye + hh * k3)
    P = eye + hh / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return fold(P, plan) if fold_events else P


def fold(Q: np.ndarray, plan: StepPlan) -> np.ndarray:
    """Step matrices with each event applied at the start of its step."""
    P = Q.copy() if plan.events else Q
    for idx, mat in plan.events.items():
        P[idx] = Q[idx] @ mat
    return P


def right_limits(xs: np.ndarray, plan: StepPlan, skip_first: bool = False) -> np.ndarray:
    """Replace samples taken just before an event by those just after it."""
    for idx, mat in plan.events.items():
        if idx == 0 and skip_first:
            continue
        xs[idx] = mat @ xs[idx]
    return xs


# -- evolution ----------------------------------------------------------------------

@dataclass
class EvolutionResult:
    times: np.ndarray
    rhos: np.ndarray
    params: SystemParams
    diagnostics: dict = field(default_factory=dict)

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.einsum("nii->ni", self.rhos))

    @property
    def final(self) -> np.ndarray:
        return self.rhos[-1]

    @property
    def flux(self) -> dict:
        """rate * <L^dag L> per channel (1/ns), summed over same-tag operators."""
        out = {}
        for op, tag in build_collapse_ops(self.params):
            ldl = op.conj().T @ op
            val = np.real(np.einsum("ab,nba->n", ldl, self.rhos))
            out[tag] = out.get(tag, 0.0) + val
        return out

    @property
    def enhanced_flux(self) -> np.ndarray:
        return self.flux.get(Channel.ENHANCED, np.zeros(len(self.times)))


def state_diagnostics(rhos: np.ndarray) -> dict:
    herm = 0.5 * (rhos + np.conj(np.swapaxes(rhos, 1, 2)))
    return {
        "max_trace_error": float(np.max(np.abs(np.einsum("nii->n", rhos) - 1))),
        "max_hermiticity_error": float(np.max(np.abs(rhos - np.conj(np.swapaxes(rhos, 1, 2))))),
        "min_eigenvalue": float(np.min(np.linalg.eigvalsh(herm))),
    }


def _propagate(P: np.ndarray, plan: StepPlan, rho0: np.ndarray, backend=None) -> np.ndarray:
    return unvec(right_limits(_kernels.chain(P, vec(rho0), backend=backend), plan))


def evolve_master(rho0, seq: PulseSequence, params: SystemParams, grid: TimeGrid, *,
                  delta_pulses: bool = False, check: bool = True, tol: float = 1e-9,
                  n_nodes: int = GH_NODES, backend: str | None = None) -> EvolutionResult:
    """Integrate the master equation over ``grid``.

    Pulses come from ``omega_at``; resets act at their times; with
    ``delta_pulses`` each pulse is replaced by an instantaneous rotation at
    its centre. Samples at an event time show the state just after it (an
    event at ``t_start`` acts on ``rho0``). In quasi-static mode the result
    is the Gauss-Hermite average over static ground detunings.

    Raises:
        StepSizeError: base step too coarse for the model's rates.
        PositivityError: a sampled state has an eigenvalue below ``-tol``.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    nodes, weights = quasistatic_nodes(params, n_nodes)
    check_step_size(params, grid, float(np.max(np.abs(nodes))))
    plan = build_plan(seq, grid, delta_pulses=delta_pulses)
    rhos = np.zeros((len(plan.times), 4, 4), dtype=complex)
    for det, w in zip(nodes, weights):
        P = transfer_matrices(plan, seq, params, det, delta_pulses)
        rhos += w * _propagate(P, plan, rho0, backend)
    diag = state_diagnostics(rhos)
    diag["n_steps"] = len(plan.times) - 1
    result = EvolutionResult(plan.times, rhos, params, diag)
    if check:
        if diag["min_eigenvalue"] < -tol:
            raise PositivityError(
                f"state lost positivity (min eigenvalue {diag['min_eigenvalue']:.3e}); reduce dt (now {grid.dt:g} ns)")
        if diag["max_trace_error"] > tol:
            raise NumericalError(f"trace drifted by {diag['max_trace_error']:.3e}; reduce dt")
    return result


def step_halving_drift(rho0, seq: PulseSequence, params: SystemParams, grid: TimeGrid, **kwargs) -> float:
    """Largest |rho_dt - rho_dt/2| over the sample times both runs share."""
    coarse = evolve_master(rho0, seq, params, grid, **kwargs)
    fine = evolve_master(rho0, seq, params, TimeGrid(grid.t_start, grid.t_end, grid.dt / 2, grid.align_delay),
                         **kwargs)
    idx = np.clip(np.searchsorted(fine.times, coarse.times), 0, len(fine.times) - 1)
    same = np.abs(fine.times[idx] - coarse.times) <= 1e-9 * max(1.0, abs(grid.t_end))
    return float(np.max(np.abs(fine.rhos[idx[same]] - coarse.rhos[same])))


def one_period_map(seq: PulseSequence, params: SystemParams, dt: float, *, detuning: float = 0.0,
                   delta_pulses: bool = False) -> np.ndarray:
    """16x16 propagator across one repetition period starting at t = 0."""
    grid = TimeGrid(0.0, seq.rep_period, dt)
    check_step_size(params, grid, detuning)
    plan = build_plan(seq, grid, delta_pulses=delta_pulses)
    P = transfer_matrices(plan, seq, params, detuning, delta_pulses)
    M = _I16.copy()
    for step in P:
        M = step @ M
    return M


def periodic_steady_state(seq: PulseSequence, params: SystemParams, dt: float, *,
                          guess=None, delta_pulses: bool = False, n_nodes: int = GH_NODES) -> np.ndarray:
    """State at the start of a repetition that the pulse train maps onto itself.

    Obtained as lim M^k rho_guess by repeated squaring of the one-period map,
    so a non-unique fixed point is resolved by projecting the guess.
    """
    guess = 0.5 * (projector(0) + projector(1)) if guess is None else np.asarray(guess, dtype=complex)
    nodes, weights = quasistatic_nodes(params, n_nodes)
    out = np.zeros((4, 4), dtype=complex)
    for det, w in zip(nodes, weights):
        M = one_period_map(seq, params, dt, detuning=det, delta_pulses=delta_pulses)
        for _ in range(40):
            M = M @ M
        out += w * unvec(M @ vec(guess))
    out = 0.5 * (out + out.conj().T)
    return out / np.trace(out).real
