"""Pure-numpy versions of the kernels in ``jit.py``.

Trajectories advance in lockstep (one array row each); every row consumes its
own counter-based random stream in the same order as the scalar kernel.
"""

import numpy as np

from .rng import stream_keys, uniforms

FREE, STEP_OP, RESET = 0, 1, 2
_NEWTON_TOL = 1e-13
_NEWTON_MAXIT = 200


class _Streams:
    def __init__(self, base, traj_ids):
        self.keys = stream_keys(base, traj_ids)
        self.counters = np.zeros(len(traj_ids), dtype=np.int64)

    def draw(self, idx):
        u = uniforms(self.keys[idx], self.counters[idx])
        self.counters[idx] += 1
        return u


def _free_tau(amp2, g, r, tmax):
    tau = np.zeros(len(r))
    todo = np.arange(len(r))
    for _ in range(_NEWTON_MAXIT):
        if todo.size == 0:
            break
        e = amp2[todo] * np.exp(-g[todo] * tau[todo, None])
        f = e.sum(axis=1) - r[todo]
        fp = -(g[todo] * e).sum(axis=1)
        ok = fp != 0.0
        step = np.zeros_like(f)
        step[ok] = f[ok] / fp[ok]
        new = np.minimum(tau[todo] - step, tmax[todo])
        tau[todo] = new
        done = (~ok) | (np.abs(step) <= _NEWTON_TOL * (1.0 + new))
        todo = todo[~done]
    return tau


def _jump(psi, idx, jops, streams):
    phi = np.einsum("kab,nb->nka", jops, psi[idx])
    w = (phi.real ** 2 + phi.imag ** 2).sum(axis=2)
    u = streams.draw(idx) * w.sum(axis=1)
    cum = np.cumsum(w, axis=1)
    chosen = np.minimum((u[:, None] >= cum).sum(axis=1), jops.shape[0] - 1)
    sel = phi[np.arange(len(idx)), chosen]
    wc = w[np.arange(len(idx)), chosen]
    scale = np.where(wc > 0, 1.0 / np.sqrt(np.where(wc > 0, wc, 1.0)), 0.0)
    psi[idx] = sel * scale[:, None]
    return chosen


def trajectories(traj_ids, base, init_mode, init_p, init_psi, kinds, t0s, t1s, args, mats,
                 energies, reset_p, reset_tgt, jops, jclick, sigma, n_reps, period):
    """Returns flat (row, time, channel) arrays of every click."""
    n = len(traj_ids)
    rows = np.arange(n)
    st = _Streams(base, traj_ids)
    psi = np.zeros((n, 4), dtype=complex)
    if init_mode == 0:
        u = st.draw(rows)
        k0 = np.minimum((u[:, None] >= np.cumsum(init_p)[None, :]).sum(axis=1), 3)
        psi[rows, k0] = 1.0
    else:
        psi[:] = init_psi
    delta = np.zeros(n)
    if sigma > 0:
        u1 = st.draw(rows)
        u2 = st.draw(rows)
        delta = sigma * np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)
    r = st.draw(rows)

    en = np.tile(energies, (n, 1))
    en[:, 0] += delta
    g = -2.0 * en.imag

    out_row, out_t, out_c = [], [], []

    def record(idx, times, chosen):
        ch = jclick[chosen]
        keep = ch >= 0
        out_row.append(idx[keep])
        out_t.append(times[keep])
        out_c.append(ch[keep])

    for rep in range(n_reps):
        base_t = rep * period
        for o in range(len(kinds)):
            kind = kinds[o]
            if kind == FREE:
                t = np.full(n, t0s[o])
                act = rows
                while act.size:
                    span = t1s[o] - t[act]
                    live = span > 0
                    act, span = act[live], span[live]
                    if act.size == 0:
                        break
                    amp2 = psi[act].real ** 2 + psi[act].imag ** 2
                    n_end = (amp2 * np.exp(-g[act] * span[:, None])).sum(axis=1)
                    fin = n_end >= r[act]
                    done = act[fin]
                    psi[done] *= np.exp(-1j * en[done] * span[fin, None])
                    jmp = act[~fin]
                    if jmp.size == 0:
                        break
                    tau = _free_tau(amp2[~fin], g[jmp], r[jmp], span[~fin])
                    psi[jmp] *= np.exp(-1j * en[jmp] * tau[:, None])
                    t[jmp] += tau
                    chosen = _jump(psi, jmp, jops, st)
                    record(jmp, base_t + t[jmp], chosen)
                    r[jmp] = st.draw(jmp)
                    act = jmp
            elif kind == STEP_OP:
                h = t1s[o] - t0s[o]
                n0 = (psi.real ** 2 + psi.imag ** 2).sum(axis=1)
                psi = psi @ mats[args[o]].T
                if sigma > 0 and h > 0:
                    psi[:, 0] *= np.exp(-1j * delta * h)
                n1 = (psi.real ** 2 + psi.imag ** 2).sum(axis=1)
                jmp = np.nonzero(n1 < r)[0]
                if jmp.size:
                    tj = np.full(jmp.size, t0s[o])
                    if h > 0:
                        ok = n0[jmp] > n1[jmp]
                        tj[ok] = t0s[o] + h * (n0[jmp][ok] - r[jmp][ok]) / (n0[jmp][ok] - n1[jmp][ok])
                    chosen = _jump(psi, jmp, jops, st)
                    record(jmp, base_t + tj, chosen)
                    r[jmp] = st.draw(jmp)
            else:
                m = args[o]
                u = st.draw(rows)
                sel = rows[u < reset_p[m]]
                if sel.size == 0:
                    continue
                a2 = psi[sel].real ** 2 + psi[sel].imag ** 2
                nrm = a2.sum(axis=1)
                wg = (a2[:, 0] + a2[:, 1]) / nrm
                ne = a2[:, 2] + a2[:, 3]
                u2 = st.draw(sel)
                ground = (u2 < wg) | (ne == 0.0)
                gsel = sel[ground]
                kk = np.ones(gsel.size, dtype=np.int64)
                if reset_tgt[m] == 0 and gsel.size:
                    u3 = st.draw(gsel)
                    kk = np.where(u3 < 0.5, 0, 1)
                psi[gsel] = 0.0
                psi[gsel, kk] = np.sqrt(nrm[ground])
                esel = sel[~ground]
                if esel.size:
                    psi[esel, 0] = 0.0
                    psi[esel, 1] = 0.0
                    psi[esel] *= np.sqrt(nrm[~ground] / ne[~ground])[:, None]

    if out_row:
        row = np.concatenate(out_row)
        tt = np.concatenate(out_t)
        cc = np.concatenate(out_c)
    else:
        row, tt, cc = np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64)
    order = np.lexsort((tt, row))
    return row[order], tt[order], cc[order]


def chain(P, x0):
    xs = np.empty((P.shape[0] + 1, x0.shape[0]), dtype=complex)
    xs[0] = x0
    for s in range(P.shape[0]):
        xs[s + 1] = P[s] @ xs[s]
    return xs


def propagate_spans(P, starts, stops, X0):
    x = X0.copy()
    nsteps = stops - starts
    for k in range(int(nsteps.max(initial=0))):
        live = np.nonzero(nsteps > k)[0]
        x[live] = np.einsum("nab,nb->na", P[starts[live] + k], x[live])
    return x


def pair_histogram(traj, times, det, max_tau, bin_width, nhalf):
    counts = np.zeros(2 * nhalf, dtype=np.int64)
    n = len(times)
    lag = 1
    while lag < n:
        same = traj[lag:] == traj[:-lag]
        dt = times[lag:] - times[:-lag]
        within = same & (dt <= max_tau)
        if not within.any():
            break
        use = within & (det[lag:] != det[:-lag])
        idx = np.floor(dt[use] / bin_width).astype(np.int64)
        idx = idx[idx < nhalf]
        counts += np.bincount(nhalf + idx, minlength=2 * nhalf)
        counts += np.bincount(nhalf - 1 - idx, minlength=2 * nhalf)
        lag += 1
    return counts
