"""numba implementations of the hot loops. Mirrors ``vectorized.py`` draw for draw."""

import math

import numba
import numpy as np
from numba import njit, prange

from .rng import GOLDEN, INV53, MIX1, MIX2, S11, S27, S30, S31, STEP

FREE, STEP_OP, RESET = 0, 1, 2
_NEWTON_TOL = 1e-13
_NEWTON_MAXIT = 200


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> S30)) * MIX1
    z = (z ^ (z >> S27)) * MIX2
    return z ^ (z >> S31)


@njit(cache=True, inline="always")
def _uniform(key, counter):
    z = _mix(key + np.uint64(counter + 1) * STEP)
    return float(z >> S11) * INV53


@njit(cache=True)
def _jump(psi, jops, key, cnt):
    nk = jops.shape[0]
    w = np.zeros(nk)
    tot = 0.0
    for k in range(nk):
        s = 0.0
        for a in range(4):
            acc = 0j
            for b in range(4):
                acc += jops[k, a, b] * psi[b]
            s += acc.real * acc.real + acc.imag * acc.imag
        w[k] = s
        tot += s
    u = _uniform(key, cnt) * tot
    chosen = nk - 1
    acc_w = 0.0
    for k in range(nk):
        acc_w += w[k]
        if u < acc_w:
            chosen = k
            break
    new = np.zeros(4, dtype=np.complex128)
    for a in range(4):
        acc = 0j
        for b in range(4):
            acc += jops[chosen, a, b] * psi[b]
        new[a] = acc
    scale = 1.0 / math.sqrt(w[chosen]) if w[chosen] > 0 else 0.0
    for a in range(4):
        psi[a] = new[a] * scale
    return chosen, cnt + 1


@njit(cache=True)
def _norm2(psi):
    s = 0.0
    for a in range(4):
        s += psi[a].real * psi[a].real + psi[a].imag * psi[a].imag
    return s


@njit(cache=True)
def _free_tau(amp2, g, r, tmax):
    # root of sum_k amp2_k exp(-g_k tau) = r; convex decreasing, Newton from the left
    tau = 0.0
    for _ in range(_NEWTON_MAXIT):
        f = -r
        fp = 0.0
        for k in range(4):
            e = amp2[k] * math.exp(-g[k] * tau)
            f += e
            fp -= g[k] * e
        if fp == 0.0:
            break
        step = f / fp
        tau -= step
        if tau > tmax:
            tau = tmax
        if abs(step) <= _NEWTON_TOL * (1.0 + tau):
            break
    return tau


@njit(cache=True)
def _run_one(key, init_mode, init_p, init_psi, kinds, t0s, t1s, args, mats, energies,
             reset_p, reset_tgt, jops, jclick, sigma, n_reps, period, out_t, out_c):
    cap = out_t.shape[0]
    cnt = 0
    psi = np.zeros(4, dtype=np.complex128)
    if init_mode == 0:
        u = _uniform(key, cnt)
        cnt += 1
        acc = 0.0
        k0 = 3
        for j in range(4):
            acc += init_p[j]
            if u < acc:
                k0 = j
                break
        psi[k0] = 1.0
    else:
        for j in range(4):
            psi[j] = init_psi[j]
    delta = 0.0
    if sigma > 0.0:
        u1 = _uniform(key, cnt)
        u2 = _uniform(key, cnt + 1)
        cnt += 2
        delta = sigma * math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)
    r = _uniform(key, cnt)
    cnt += 1

    en = energies.copy()
    en[0] += delta
    g = np.empty(4)
    for j in range(4):
        g[j] = -2.0 * en[j].imag
    amp2 = np.empty(4)
    nclick = 0

    for rep in range(n_reps):
        base = rep * period
        for o in range(kinds.shape[0]):
            kind = kinds[o]
            if kind == FREE:
                t = t0s[o]
                tend = t1s[o]
                while tend - t > 0.0:
                    span = tend - t
                    n_end = 0.0
                    for j in range(4):
                        amp2[j] = psi[j].real * psi[j].real + psi[j].imag * psi[j].imag
                        n_end += amp2[j] * math.exp(-g[j] * span)
                    if n_end >= r:
                        for j in range(4):
                            psi[j] *= np.exp(-1j * en[j] * span)
                        break
                    tau = _free_tau(amp2, g, r, span)
                    for j in range(4):
                        psi[j] *= np.exp(-1j * en[j] * tau)
                    t += tau
                    ch, cnt = _jump(psi, jops, key, cnt)
                    if jclick[ch] >= 0:
                        if nclick < cap:
                            out_t[nclick] = base + t
                            out_c[nclick] = jclick[ch]
                        nclick += 1
                    r = _uniform(key, cnt)
                    cnt += 1
            elif kind == STEP_OP:
                m = args[o]
                n0 = _norm2(psi)
                new = np.zeros(4, dtype=np.complex128)
                for a in range(4):
                    acc = 0j
                    for b in range(4):
                        acc += mats[m, a, b] * psi[b]
                    new[a] = acc
                h = t1s[o] - t0s[o]
                if sigma > 0.0 and h > 0.0:
                    new[0] *= np.exp(-1j * delta * h)
                for a in range(4):
                    psi[a] = new[a]
                n1 = _norm2(psi)
                if n1 < r:
                    tj = t0s[o]
                    if h > 0.0 and n0 > n1:
                        tj = t0s[o] + h * (n0 - r) / (n0 - n1)
                    ch, cnt = _jump(psi, jops, key, cnt)
                    if jclick[ch] >= 0:
                        if nclick < cap:
                            out_t[nclick] = base + tj
                            out_c[nclick] = jclick[ch]
                        nclick += 1
                    r = _uniform(key, cnt)
                    cnt += 1
            else:
                m = args[o]
                u = _uniform(key, cnt)
                cnt += 1
                if u < reset_p[m]:
                    nrm = _norm2(psi)
                    wg = (psi[0].real ** 2 + psi[0].imag ** 2 + psi[1].real ** 2 + psi[1].imag ** 2) / nrm
                    ne = psi[2].real ** 2 + psi[2].imag ** 2 + psi[3].real ** 2 + psi[3].imag ** 2
                    u2 = _uniform(key, cnt)
                    cnt += 1
                    if u2 < wg or ne == 0.0:
                        kk = 1
                        if reset_tgt[m] == 0:
                            u3 = _uniform(key, cnt)
                            cnt += 1
                            kk = 0 if u3 < 0.5 else 1
                        for j in range(4):
                            psi[j] = 0.0
                        psi[kk] = math.sqrt(nrm)
                    else:
                        psi[0] = 0.0
                        psi[1] = 0.0
                        sc = math.sqrt(nrm / ne)
                        for j in range(4):
                            psi[j] *= sc
    return nclick


@njit(cache=True, parallel=True)
def trajectories(traj_ids, base, init_mode, init_p, init_psi, kinds, t0s, t1s, args, mats,
                 energies, reset_p, reset_tgt, jops, jclick, sigma, n_reps, period,
                 out_t, out_c, out_n):
    for m in prange(traj_ids.shape[0]):
        key = _mix(base + np.uint64(traj_ids[m] + 1) * GOLDEN)
        out_n[m] = _run_one(key, init_mode, init_p, init_psi, kinds, t0s, t1s, args, mats,
                            energies, reset_p, reset_tgt, jops, jclick, sigma, n_reps, period,
                            out_t[m], out_c[m])


@njit(cache=True)
def chain(P, x0):
    n = P.shape[0]
    dim = x0.shape[0]
    xs = np.empty((n + 1, dim), dtype=np.complex128)
    xs[0] = x0
    for s in range(n):
        for a in range(dim):
            acc = 0j
            for b in range(dim):
                acc += P[s, a, b] * xs[s, b]
            xs[s + 1, a] = acc
    return xs


@njit(cache=True, parallel=True)
def propagate_spans(P, starts, stops, X0):
    m = starts.shape[0]
    dim = X0.shape[1]
    out = np.empty_like(X0)
    for i in prange(m):
        x = X0[i].copy()
        y = np.empty(dim, dtype=np.complex128)
        for s in range(starts[i], stops[i]):
            for a in range(dim):
                acc = 0j
                for b in range(dim):
                    acc += P[s, a, b] * x[b]
                y[a] = acc
            x[:] = y
        out[i] = x
    return out


@njit(cache=True)
def pair_histogram(traj, times, det, max_tau, bin_width, nhalf):
    counts = np.zeros(2 * nhalf, dtype=np.int64)
    n = times.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            if traj[j] != traj[i]:
                break
            dt = times[j] - times[i]
            if dt > max_tau:
                break
            if det[j] == det[i]:
                continue
            idx = int(math.floor(dt / bin_width))
            if idx < nhalf:
                counts[nhalf + idx] += 1
                counts[nhalf - 1 - idx] += 1
    return counts


def set_threads(n: int) -> int:
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n
