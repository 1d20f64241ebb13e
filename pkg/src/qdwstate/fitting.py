"""Least-squares fits used by the experiments.

Every fit is seeded by a closed-form estimate and then refined with
``scipy.optimize.curve_fit``:

* exponential: log-linear regression on the positive samples;
* sinusoid: linear regression on (1, cos phi, sin phi), which is exact for
  noiseless data, so the nonlinear step only polishes noisy scans;
* damped oscillation: exponential envelope first, then the oscillation
  frequency from the spacing of mean crossings of the flattened residual.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

MAX_EVALS = 20000


class FitError(RuntimeError):
    """The fit is degenerate or did not converge."""


@dataclass
class FitResult:
    params: dict
    stderr: dict
    residual_norm: float
    extras: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        return {"params": self.params, "stderr": self.stderr, "residual_norm": self.residual_norm,
                **self.extras}


def _stderr(pcov, names) -> dict:
    diag = np.diag(pcov) if pcov is not None and np.all(np.isfinite(pcov)) else np.zeros(len(names))
    return {n: float(math.sqrt(max(v, 0.0))) for n, v in zip(names, diag)}


def _curve_fit(model, x, y, p0, sigma=None):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        try:
            return curve_fit(model, x, y, p0=p0, sigma=sigma, maxfev=MAX_EVALS)
        except (RuntimeError, ValueError) as exc:
            raise FitError(f"least squares did not converge: {exc}") from exc


def _exp_model(t, a, tau):
    return a * np.exp(-t / tau)


def fit_exponential(t, y, sigma=None) -> FitResult:
    """Fit y = A exp(-t / tau). Returns params A, tau."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 3:
        raise FitError("exponential fit needs at least 3 points")
    pos = y > 1e-12 * max(float(np.max(y)), 0.0)  # skip the rounding-noise floor in the seed
    if pos.sum() < 3:
        raise FitError("exponential fit needs at least 3 positive samples")
    slope, icpt = np.polyfit(t[pos], np.log(y[pos]), 1)
    if not slope < -1e-12 * max(1.0, abs(icpt)):
        raise FitError("series does not decay; no exponential time constant")
    t_ref = t[0]
    p0 = (math.exp(icpt + slope * t_ref), -1.0 / slope)
    popt, pcov = _curve_fit(lambda tt, a, tau: _exp_model(tt - t_ref, a, tau), t, y, p0, sigma)
    a, tau = popt
    if not tau > 0 or not np.isfinite(tau):
        raise FitError(f"fit produced a non-physical time constant {tau}")
    resid = y - _exp_model(t - t_ref, a, tau)
    err = _stderr(pcov, ("A", "tau"))
    return FitResult({"A": float(a * math.exp(t_ref / tau)), "tau": float(tau)}, err,
                     float(np.linalg.norm(resid)))


def _sin_model(phi, a, b, phi0):
    return a + b * np.cos(phi + phi0)


def fit_sinusoid(phases, values, sigma=None) -> FitResult:
    """Fit I(phi) = A + B cos(phi + phi0) with B >= 0; adds V = B / A."""
    phases = np.asarray(phases, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.unique(np.round(np.mod(phases, 2 * np.pi), 12)).size < 4:
        raise FitError("sinusoid fit needs at least 4 distinct phases")
    design = np.column_stack([np.ones_like(phases), np.cos(phases), np.sin(phases)])
    (a, c, s), *_ = np.linalg.lstsq(design, values, rcond=None)
    b = math.hypot(c, s)
    phi0 = math.atan2(-s, c)
    resid = values - design @ np.array([a, c, s])
    scale = max(np.max(np.abs(values)), 1e-300)
    if np.linalg.norm(resid) > 1e-12 * scale * math.sqrt(values.size) and b > 0:
        (a, b, phi0), _ = _curve_fit(_sin_model, phases, values, (a, b, phi0), sigma)
        if b < 0:
            b, phi0 = -b, phi0 + math.pi
        resid = values - _sin_model(phases, a, b, phi0)
    if not a > 0:
        raise FitError(f"degenerate fit: offset A = {a:.4g} must be > 0")
    if b <= 1e-12 * a:
        b = 0.0
    phi0 = float(math.remainder(phi0, 2 * math.pi))
    # covariance from the linear model, which the nonlinear step shares at the optimum
    dof = max(values.size - 3, 1)
    s2 = float(resid @ resid) / dof
    if sigma is not None:
        w = 1.0 / np.asarray(sigma, dtype=float) ** 2
        cov_lin = np.linalg.inv(design.T @ (design * w[:, None]))
    else:
        cov_lin = s2 * np.linalg.inv(design.T @ design)
    # V = hypot(c, s) / a
    v = b / a
    if b > 0:
        grad = np.array([-v / a, math.cos(phi0) / a, -math.sin(phi0) / a])
    else:
        grad = np.array([0.0, 1.0 / a, 0.0])
    se_v = float(math.sqrt(max(grad @ cov_lin @ grad, 0.0)))
    se_a = float(math.sqrt(max(cov_lin[0, 0], 0.0)))
    se_b = float(math.sqrt(max(cov_lin[1, 1] * math.cos(phi0) ** 2 + cov_lin[2, 2] * math.sin(phi0) ** 2, 0.0)))
    return FitResult({"A": float(a), "B": float(b), "phi0": phi0, "V": float(v)},
                     {"A": se_a, "B": se_b, "V": se_v}, float(np.linalg.norm(resid)))


def _damped_model(t, a, b, omega, phi, tau_r, tau_p):
    return (a + b * np.cos(omega * t + phi) * np.exp(-t / tau_r)) * np.exp(-t / tau_p)


def fit_damped_oscillation(t, y, omega_guess: float | None = None) -> FitResult:
    """Fit (A + B cos(omega t + phi) e^{-t/tau_r}) e^{-t/tau_p}.

    Params: A, B, omega, phi, tau_r, tau_p.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 8:
        raise FitError("damped-oscillation fit needs at least 8 points")
    t0 = t[0]
    tt = t - t0
    env = fit_exponential(tt, np.clip(y, 1e-300, None))
    tau_p = env["tau"]
    flat = y * np.exp(tt / tau_p)
    a = float(np.mean(flat[tt > 0.5 * tt[-1]]))
    if omega_guess is None:
        sign = np.signbit(flat - a)
        cross = tt[1:][sign[1:] != sign[:-1]]
        if cross.size < 2:
            raise FitError("no oscillation found to seed the frequency")
        omega_guess = math.pi / float(np.mean(np.diff(cross[: min(cross.size, 8)])))
    resid = flat - a
    b0 = float(resid[0])
    phi0 = 0.0 if b0 >= 0 else math.pi
    # envelope of the oscillation from the local extrema of |resid|
    mag = np.abs(resid)
    peaks = np.nonzero((mag[1:-1] >= mag[:-2]) & (mag[1:-1] >= mag[2:]) & (mag[1:-1] > 0))[0] + 1
    tau_r = tau_p
    if peaks.size >= 3:
        try:
            tau_r = fit_exponential(tt[peaks], mag[peaks])["tau"]
        except FitError:
            pass
    p0 = (a, abs(b0), omega_guess, phi0, tau_r, tau_p)
    lower = (-np.inf, 0.0, 0.0, -np.inf, 1e-12, 1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        try:
            popt, pcov = curve_fit(_damped_model, tt, y, p0=p0, bounds=(lower, np.inf), max_nfev=MAX_EVALS)
        except (RuntimeError, ValueError) as exc:
            raise FitError(f"least squares did not converge: {exc}") from exc
    names = ("A", "B", "omega", "phi", "tau_r", "tau_p")
    params = dict(zip(names, map(float, popt)))
    if params["B"] < 0:
        params["B"] = -params["B"]
        params["phi"] += math.pi
    params["omega"] = abs(params["omega"])
    if not (params["tau_p"] > 0 and params["tau_r"] > 0):
        raise FitError("damped-oscillation fit produced non-physical time constants")
    resid = y - _damped_model(tt, *popt)
    return FitResult(params, _stderr(pcov, names), float(np.linalg.norm(resid)))
