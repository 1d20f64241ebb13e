"""Two-time field and intensity correlations by quantum regression."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..core import TBAR, SystemParams, projector
from ..pulses import PulseSequence
from .master import (GH_NODES, TimeGrid, build_plan, check_step_size, fold, quasistatic_nodes, rate_scale,
                     right_limits, transfer_matrices, unvec, vec)

_INTENSITY_FLOOR = 1e-14


class CorrKind(str, enum.Enum):
    G1 = "G1"
    G2 = "G2"


def default_dt(params: SystemParams, seq: PulseSequence, fraction: float = 0.05) -> float:
    rate = max(rate_scale(params), 1e-3)
    return min(fraction / rate, 0.01)


def _lowering(params: SystemParams) -> np.ndarray:
    return projector(params.enhanced_target, TBAR)


def two_time_corr(rho_t, params: SystemParams, seq: PulseSequence, t: float, taus, kind="G1", *,
                  dt: float | None = None, delta_pulses: bool = False, n_nodes: int = GH_NODES,
                  backend: str | None = None) -> np.ndarray:
    """G1(t, tau) or G2(t, tau) for every tau in ``taus`` (taus >= 0).

    G1 = gamma_enh Tr[s^dag Phi_tau(s rho)], G2 = gamma_enh^2 Tr[s^dag s Phi_tau(s rho s^dag)]
    with s the enhanced lowering operator and Phi the driven propagator from t.

    In quasi-static mode the propagator is averaged over the static detuning
    while ``rho_t`` is shared, which is approximate; ``delayed_coherence``
    averages correctly from the start of the evolution. ``rho_t`` is taken
    as the state just after any event at ``t``.
    """
    kind = CorrKind(kind)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if np.any(taus < 0):
        raise ValueError("taus must be >= 0")
    rho_t = np.asarray(rho_t, dtype=complex)
    s = _lowering(params)
    g = params.gamma_enh
    x0 = s @ rho_t if kind is CorrKind.G1 else s @ rho_t @ s.conj().T
    e, tb = params.enhanced_target, TBAR

    def read(x):
        return g * x[..., e, tb] if kind is CorrKind.G1 else g * g * x[..., tb, tb]

    tmax = float(taus.max())
    if tmax == 0:
        return np.full(taus.shape, read(x0), dtype=complex)
    dt = dt or default_dt(params, seq)
    grid = TimeGrid(t, t + tmax, dt)
    nodes, weights = quasistatic_nodes(params, n_nodes)
    check_step_size(params, grid, float(np.max(np.abs(nodes))))
    plan = build_plan(seq, grid, delta_pulses=delta_pulses, extra_points=t + taus)
    idx = plan.index_of(t + taus)
    out = np.zeros(taus.shape, dtype=complex)
    for det, w in zip(nodes, weights):
        Q = transfer_matrices(plan, seq, params, det, delta_pulses, fold_events=False)
        P = fold(Q, plan)
        if 0 in plan.events:
            P[0] = Q[0]
        xs = right_limits(_kernels.chain(P, vec(x0), backend=backend), plan, skip_first=True)
        out += w * read(unvec(xs)[idx])
    return out


@dataclass
class G1Series:
    """Equal-time intensity and G1(t, delay) on a shared grid.

    ``g1[i]`` is zero where t_i + delay runs past the grid or where the
    intensity at t_i is negligible.
    """

    times: np.ndarray
    intensity: np.ndarray
    g1: np.ndarray
    delay: float
    dt: float

    def shifted(self, values: np.ndarray) -> np.ndarray:
        """values(t - delay) on the same grid (zero before the start)."""
        out = np.zeros_like(values)
        src = np.searchsorted(self.times, self.times - self.delay - 1e-9 * max(1.0, self.delay))
        ok = self.times - self.delay >= self.times[0] - 1e-9
        mask = ok & (src < len(self.times))
        out[mask] = values[src[mask]]
        return out


def invariant_subspace(P: np.ndarray, seeds: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis (columns) of the smallest subspace holding ``seeds`` and closed under every P[n]."""
    w, U = np.linalg.eigh(seeds @ seeds.conj().T)
    V = U[:, w > rtol * w[-1]]
    while True:
        W = np.einsum("nab,bk->nak", P, V).transpose(1, 0, 2).reshape(P.shape[1], -1)
        gram = V @ V.conj().T + W @ W.conj().T / P.shape[0]
        w, U = np.linalg.eigh(gram)
        keep = w > rtol * w[-1]
        if keep.sum() <= V.shape[1]:
            return V
        V = U[:, keep]


def delayed_coherence(rho0, seq: PulseSequence, params: SystemParams, grid: TimeGrid, delay: float, *,
                      delta_pulses: bool = False, n_nodes: int = GH_NODES, windows=None,
                      backend: str | None = None) -> G1Series:
    """Intensity I(t) and G1(t, delay) over the whole grid by batched regression.

    The step plan is closed under shifts by ``delay`` so both ends of every
    pair fall on grid points. With ``windows`` (a list of (start, end)) G1 is
    only computed for t inside them. Regression vectors s rho stay in a small
    invariant subspace of the step maps, so propagation runs in that subspace.

    Raises:
        OffGridError: if ``delay`` is not commensurate with ``grid.align_delay``.
    """
    if not delay > 0:
        raise ValueError("delay must be > 0")
    if grid.align_delay is None:
        grid = TimeGrid(grid.t_start, grid.t_end, grid.dt, delay)
    nodes, weights = quasistatic_nodes(params, n_nodes)
    check_step_size(params, grid, float(np.max(np.abs(nodes))))
    plan = build_plan(seq, grid, delta_pulses=delta_pulses)
    times = plan.times
    s = _lowering(params)
    e = params.enhanced_target
    g = params.gamma_enh
    intensity = np.zeros(len(times))
    g1 = np.zeros(len(times), dtype=complex)
    last = np.searchsorted(times, times[-1] - delay + 1e-9 * max(1.0, delay), side="right")
    events = np.array(sorted(plan.events), dtype=np.int64)
    wanted = np.ones(len(times), dtype=bool)
    if windows is not None:
        wanted[:] = False
        for a, b in windows:
            wanted |= (times >= a - 1e-12) & (times <= b + 1e-12)
    seeds = np.stack([vec(s @ projector(i, j)) for i in range(4) for j in range(4)], axis=1)
    for det, w in zip(nodes, weights):
        Q = transfer_matrices(plan, seq, params, det, delta_pulses, fold_events=False)
        P = fold(Q, plan)
        rhos = unvec(right_limits(_kernels.chain(P, vec(rho0), backend=backend), plan))
        inten = g * rhos[:, TBAR, TBAR].real
        intensity += w * inten
        live = (inten > _INTENSITY_FLOOR * max(inten.max(), 1e-300)) & wanted
        starts = np.nonzero(live[:last])[0]
        if starts.size == 0:
            continue
        stops = plan.index_of(times[starts] + delay)
        x0 = (s[None] @ rhos[starts]).reshape(-1, 16)
        # samples are right limits: a start on an event step must skip that event
        first = starts.copy()
        on_event = np.isin(starts, events)
        x0[on_event] = np.einsum("nab,nb->na", Q[starts[on_event]], x0[on_event])
        first[on_event] += 1
        mats = np.concatenate([P, Q[events], np.array([plan.events[int(i)] for i in events]).reshape(-1, 16, 16)])
        V = invariant_subspace(mats, seeds)
        Vh = V.conj().T
        Pr = np.ascontiguousarray(Vh[None] @ P @ V[None])
        x = _kernels.propagate_spans(Pr, first, stops, np.ascontiguousarray(x0 @ Vh.T), backend=backend)
        x = x @ V.T
        for j in np.nonzero(np.isin(stops, events))[0]:
            x[j] = plan.events[int(stops[j])] @ x[j]
        g1[starts] += w * g * x[:, 4 * e + TBAR]
    return G1Series(times, intensity, g1, float(delay), grid.dt)
