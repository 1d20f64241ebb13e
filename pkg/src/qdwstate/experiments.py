"""End-to-end experiments: spin pumping, W-state emission, HBT, interference."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import simpson

from .core import GROUND, HBAR, SystemParams, TimeBinState, check_density_matrix, mixed_ground, projector, wstate
from .detection import (G2Estimate, Histogram, VisibilityFit, apply_detector, g2_estimate, hbt_correlate,
                        side_peak_areas, temporal_filter, time_resolved_histogram, umi_phase_scan, visibility,
                        window_counts)
from .dynamics.correlations import G1Series, delayed_coherence
from .dynamics.master import EvolutionResult, TimeGrid, evolve_master, periodic_steady_state
from .dynamics.trajectories import ClickSet, sample_trajectories
from .fitting import FitError, FitResult, fit_damped_oscillation, fit_exponential
from .pulses import (DEFAULT_BIN_SPACING, DEFAULT_FIRST_PULSE, DEFAULT_PULSE_DURATION, DEFAULT_REP_PERIOD,
                     RESET_HBAR, SQUARE, Pulse, PulseSequence, ResetPulse, compile_sequence)


class Scheme(str, enum.Enum):
    WEAK = "weak"
    DETERMINISTIC = "deterministic"


class CoherenceModel(str, enum.Enum):
    MARKOV = "markov"
    GAUSS = "gauss"


@dataclass
class AnalysisOptions:
    hist_bin_ns: float = 0.02
    hbt_bin_ns: float = 0.05
    far_peaks: tuple[int, int] = (5, 10)
    side_m_max: int = 10
    phases_rad: tuple[float, ...] = tuple(2 * math.pi * k / 8 for k in range(8))
    filter_windows: tuple[tuple[float, float], ...] | None = None
    detector_efficiency: float = 1.0
    dark_rate_per_ns: float = 0.0
    jitter_ns: float = 0.0
    background_rate_per_ns: float = 0.0
    background_window_ns: tuple[float, float] | None = None
    fit_model: str = "auto"
    fit_start_ns: float | None = None


@dataclass
class ExperimentSpec:
    """Everything one run needs; see ``config.validate_config`` for the document form."""

    params: SystemParams
    seq: PulseSequence
    n_traj: int = 10000
    n_reps: int = 1
    dt: float = 0.002
    seed: int | None = None
    threads: int | None = None
    delta_pulses: bool = False
    estimator: str = "trajectories"
    initial: str = "mixed"
    analysis: AnalysisOptions = field(default_factory=AnalysisOptions)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _complex_pair(z) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


# -- spin pumping -------------------------------------------------------------------------

def cw_sequence(omega: float, duration: float) -> PulseSequence:
    """A single square drive of amplitude ``omega`` lasting the whole window."""
    if omega < 0 or duration <= 0:
        raise ValueError("CW drive needs omega >= 0 and duration > 0")
    return PulseSequence((Pulse(0.0, duration, omega * duration),), (), duration, duration)


def adiabatic_pumping_rate(params: SystemParams, omega: float) -> float:
    """Weak-drive pumping rate gamma_enh Omega^2 / (Gamma^2 + 4 Delta^2) (1/ns)."""
    g = params.gamma_total
    return params.gamma_enh * omega ** 2 / (g ** 2 + 4 * params.delta_drive ** 2)


@dataclass
class SpinPumpingResult:
    fit: FitResult
    model: str
    tau_p: float
    evolution: EvolutionResult

    @property
    def times(self):
        return self.evolution.times

    @property
    def flux(self):
        return self.evolution.enhanced_flux

    def save(self, out: Path) -> list[Path]:
        flux_path = out / "flux.csv"
        with open(flux_path, "w") as fh:
            fh.write("time_ns,enhanced_flux_per_ns\n")
            for t, f in zip(self.times.tolist(), self.flux.tolist()):
                fh.write(f"{t:.17g},{f:.17g}\n")
        fit_path = out / "fit.json"
        _write_json(fit_path, {"model": self.model, "tau_p_ns": self.tau_p, **self.fit.to_dict()})
        return [flux_path, fit_path]


def run_spin_pumping(spec: ExperimentSpec) -> SpinPumpingResult:
    """Drive |hbar>-|Tbar> continuously and fit the decay of the enhanced flux.

    ``analysis.fit_model`` is "exponential", "oscillatory" or "auto"
    (oscillatory once the drive exceeds the total decay rate).
    """
    seq, params = spec.seq, spec.params
    if not seq.pulses:
        raise ValueError("spin pumping needs a CW drive")
    omega = seq.peak_rabi
    t_end = seq.rep_period
    rho0 = mixed_ground() if spec.initial == "mixed" else projector(HBAR)
    evo = evolve_master(rho0, seq, params, TimeGrid(0.0, t_end, spec.dt))
    flux = evo.enhanced_flux
    if omega == 0 or np.max(flux) <= 0:
        raise FitError("zero drive: the enhanced flux vanishes, nothing to fit")
    model = spec.analysis.fit_model
    if model == "auto":
        model = "oscillatory" if omega > params.gamma_total else "exponential"
    t = evo.times
    if model == "exponential":
        start = spec.analysis.fit_start_ns
        if start is None:
            start = 20.0 / params.gamma_total
        sel = t >= start
        fit = fit_exponential(t[sel], flux[sel])
        tau = fit["tau"]
    elif model == "oscillatory":
        start = spec.analysis.fit_start_ns or 0.0
        sel = t >= start
        fit = fit_damped_oscillation(t[sel], flux[sel], omega_guess=omega)
        tau = fit["tau_p"]
    else:
        raise ValueError(f"unknown fit model {model!r}")
    return SpinPumpingResult(fit, model, float(tau), evo)


# -- W-state emission ----------------------------------------------------------------------

def wstate_sequence(scheme: Scheme | str, d: int, *, sum_p: float = 0.3, phases=None,
                    bin_spacing: float = DEFAULT_BIN_SPACING, pulse_duration: float = DEFAULT_PULSE_DURATION,
                    first_pulse: float = DEFAULT_FIRST_PULSE, rep_period: float = DEFAULT_REP_PERIOD,
                    shape: str = SQUARE, p_rand: float = 1.0, reset_t0: float | None = None,
                    efficiency: float = 1.0) -> PulseSequence:
    """Equal-probability sequence for ``d`` bins.

    WEAK: total emission ``sum_p`` < 1 followed by a partial spin reset.
    DETERMINISTIC: sum 1, preceded by an ideal preparation of |hbar> at t = 0.
    """
    scheme = Scheme(scheme)
    if d < 1:
        raise ValueError("d must be >= 1")
    if scheme is Scheme.DETERMINISTIC:
        reset = ResetPulse(0.0, 1.0, RESET_HBAR)
        probs = np.full(d, 1.0 / d)
    else:
        t_reset = rep_period - 1.5 if reset_t0 is None else reset_t0
        reset = ResetPulse(t_reset, p_rand)
        probs = np.full(d, sum_p / d)
    return compile_sequence(probs, phases, bin_spacing, pulse_duration, first_pulse=first_pulse, shape=shape,
                            rep_period=rep_period, reset=reset, efficiency=efficiency)


def starting_state(spec: ExperimentSpec) -> np.ndarray:
    """Periodic steady state of the pulse train (the state a long experiment sees)."""
    return periodic_steady_state(spec.seq, spec.params, spec.dt, delta_pulses=spec.delta_pulses)


def _clean_diagonal(rho: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    off = rho - np.diag(np.diag(rho))
    return np.diag(np.diag(rho)) if np.max(np.abs(off)) <= tol else rho


def photon_windows(seq: PulseSequence, delta_pulses: bool = False) -> list[tuple[float, float]]:
    """Bin windows; instantaneous pulses act at their centers, so windows open there."""
    wins = seq.bin_windows()
    if delta_pulses:
        wins = [(p.center, b) for p, (_, b) in zip(seq.pulses, wins)]
    return wins


@dataclass
class CoherenceMatrix:
    """Single-photon density matrix over bins built from regression G1."""

    intensity: np.ndarray       # integrated photon number per bin (master equation)
    g1: np.ndarray              # integral of G1 over bin j at delay (k - j) spacing, j < k
    diagnostics: dict


def bin_coherences(rho0, seq: PulseSequence, params: SystemParams, dt: float, *,
                   delta_pulses: bool = False) -> CoherenceMatrix:
    """Photon numbers and inter-bin field correlations within one repetition."""
    d = seq.d
    spacing = seq.bin_spacing
    windows = photon_windows(seq, delta_pulses)
    grid = TimeGrid(0.0, seq.rep_period, dt, spacing)
    evo = evolve_master(rho0, seq, params, TimeGrid(0.0, seq.rep_period, dt), delta_pulses=delta_pulses)
    g1 = np.zeros((d, d), dtype=complex)
    intensity = None
    for lag in range(1, d):
        series = delayed_coherence(rho0, seq, params, grid, lag * spacing, delta_pulses=delta_pulses,
                                   windows=windows[:d - lag])
        if intensity is None:
            intensity = np.array([_integrate(series.times, series.intensity, w) for w in windows])
        for j in range(d - lag):
            g1[j, j + lag] = _integrate(series.times, series.g1, windows[j])
    if intensity is None:
        intensity = np.array([_integrate(evo.times, evo.enhanced_flux, w) for w in windows])
    return CoherenceMatrix(intensity, g1, dict(evo.diagnostics))


def _integrate(t: np.ndarray, y: np.ndarray, window: tuple[float, float]) -> complex:
    a, b = window
    sel = (t >= a - 1e-12) & (t <= b + 1e-12)
    if sel.sum() < 2:
        return 0.0
    if sel.sum() < 3:
        return np.trapezoid(y[sel], t[sel])
    return simpson(y[sel], x=t[sel])


def single_photon_rho(probs: np.ndarray, coh: CoherenceMatrix) -> np.ndarray:
    """(d+1)x(d+1) state in the basis [vacuum, 1_1 .. 1_d].

    Populations come from ``probs``; coherences take the degree of coherence
    from the master equation, g_jk / sqrt(I_j I_k), scaled by sqrt(p_j p_k).
    """
    d = probs.size
    rho = np.zeros((d + 1, d + 1), dtype=complex)
    rho[0, 0] = max(0.0, 1.0 - probs.sum())
    for k in range(d):
        rho[k + 1, k + 1] = probs[k]
    for j in range(d):
        for k in range(j + 1, d):
            norm = math.sqrt(coh.intensity[j] * coh.intensity[k])
            deg = coh.g1[j, k] / norm if norm > 0 else 0.0
            rho[j + 1, k + 1] = deg * math.sqrt(probs[j] * probs[k])
            rho[k + 1, j + 1] = np.conj(rho[j + 1, k + 1])
    return rho


@dataclass
class WStateResult:
    scheme: Scheme
    histogram: Histogram | None
    probs: np.ndarray
    probs_stderr: np.ndarray
    rho: np.ndarray
    state: TimeBinState
    fidelity: float
    heralded_fidelity: float
    clicks: ClickSet | None
    diagnostics: dict

    @property
    def peak_spread(self) -> float:
        """(max - min) / mean of the bin probabilities."""
        return float((self.probs.max() - self.probs.min()) / self.probs.mean())

    def save(self, out: Path) -> list[Path]:
        files = []
        if self.histogram is not None:
            files.append(out / "histogram.csv")
            self.histogram.to_csv(files[-1])
        if self.clicks is not None:
            files.append(out / "clicks.csv")
            self.clicks.to_csv(files[-1])
        files.append(out / "state.json")
        _write_json(files[-1], {
            "scheme": self.scheme.value,
            "bin_probabilities": self.probs.tolist(),
            "bin_probabilities_stderr": self.probs_stderr.tolist(),
            "amplitudes": [_complex_pair(a) for a in self.state.amps],
            "vacuum": _complex_pair(self.state.vac),
            "rho_basis": "vacuum, bin 1 .. bin d",
            "rho_real": np.real(self.rho).tolist(),
            "rho_imag": np.imag(self.rho).tolist(),
            "fidelity": self.fidelity,
            "heralded_fidelity": self.heralded_fidelity,
        })
        return files


def _state_from_rho(rho: np.ndarray) -> TimeBinState:
    probs = np.real(np.diag(rho))[1:]
    amps = np.sqrt(np.clip(probs, 0, None)).astype(complex)
    if probs.size and probs[0] > 0:
        ref = rho[1, 1:]
        amps = amps * np.exp(1j * np.angle(np.where(np.abs(ref) > 0, np.conj(ref), 1.0)))
    vac = math.sqrt(max(0.0, 1.0 - probs.sum()))
    return TimeBinState.normalized(amps, vac)


def run_wstate(spec: ExperimentSpec, scheme: Scheme | str = Scheme.WEAK, d: int | None = None) -> WStateResult:
    """Emit time-bin photons with ``spec.seq`` and estimate the photonic state.

    Bin probabilities come from click counts per bin window (``estimator``
    "trajectories") or from the master-equation flux ("master"). Inter-bin
    coherences always come from regression G1. Fidelity is to the d-bin W
    state; the heralded value conditions on one photon being emitted.
    """
    scheme = Scheme(scheme)
    seq, params = spec.seq, spec.params
    d = seq.d if d is None else d
    if d != seq.d:
        raise ValueError(f"sequence has {seq.d} pulses but d={d}")
    rho0 = _clean_diagonal(starting_state(spec))
    bad = check_density_matrix(rho0, 1e-8)
    if bad:
        raise ArithmeticError("steady state is not a density matrix: " + "; ".join(bad))
    coh = bin_coherences(rho0, seq, params, spec.dt, delta_pulses=spec.delta_pulses)
    windows = photon_windows(seq, spec.delta_pulses)
    clicks = hist = None
    if spec.estimator == "master":
        probs = np.real(coh.intensity)
        stderr = np.zeros(d)
    elif spec.estimator == "trajectories":
        if spec.seed is None:
            raise ValueError("trajectory estimator needs a seed")
        clicks = sample_trajectories(rho0, seq, params, spec.n_traj, spec.seed, n_reps=spec.n_reps,
                                     threads=spec.threads, delta_pulses=spec.delta_pulses)
        hist = time_resolved_histogram(clicks, bin_width=spec.analysis.hist_bin_ns, sync_period=seq.rep_period)
        trials = spec.n_traj * spec.n_reps
        counts = window_counts(clicks, windows, seq.rep_period)
        probs = counts / trials
        stderr = np.sqrt(counts) / trials
    else:
        raise ValueError(f"unknown estimator {spec.estimator!r}")
    rho = single_photon_rho(probs, coh)
    target = np.concatenate([[0.0], wstate(d).amps])
    fid = float(np.real(np.conj(target) @ rho @ target))
    total = float(probs.sum())
    heralded = fid / total if total > 0 else 0.0
    diag = dict(coh.diagnostics)
    return WStateResult(scheme, hist, probs, stderr, rho, _state_from_rho(rho), fid, heralded, clicks, diag)


# -- HBT and reset memory ----------------------------------------------------------------

def reset_transfer(p_rand: float, p_click: float) -> np.ndarray:
    """One repetition acting on (P[hbar], P[h]) at the start of a period.

    The pulses move hbar -> h with probability ``p_click`` (the heralded
    emission), then the reset mixes the ground spin with probability ``p_rand``.
    """
    emit = np.array([[1 - p_click, 0.0], [p_click, 1.0]])
    reset = np.array([[1 - p_rand / 2, p_rand / 2], [p_rand / 2, 1 - p_rand / 2]])
    return reset @ emit


def reset_recovery(p_rand: float, p_click: float, m_max: int) -> np.ndarray:
    """Predicted correlation peak heights relative to uncorrelated pairs, m = 1..m_max.

    After a click the spin sits in h; the chance of another click m periods
    later, over its stationary value, is the returned ratio.
    """
    T = reset_transfer(p_rand, p_click)
    w, v = np.linalg.eig(T)
    stat = np.real(v[:, np.argmin(np.abs(w - 1))])
    stat = stat / stat.sum()
    reset = np.array([[1 - p_rand / 2, p_rand / 2], [p_rand / 2, 1 - p_rand / 2]])
    state = reset @ np.array([0.0, 1.0])
    out = []
    for _ in range(m_max):
        out.append(state[0] / stat[0])
        state = T @ state
    return np.array(out)


def click_probability(seq: PulseSequence, params: SystemParams, dt: float, *, delta_pulses: bool = False) -> float:
    """Probability that one repetition started in |hbar> ends in the enhanced target."""
    bare = PulseSequence(seq.pulses, (), seq.bin_spacing, seq.rep_period)
    evo = evolve_master(projector(HBAR), bare, params, TimeGrid(0.0, seq.rep_period, dt), delta_pulses=delta_pulses)
    return float(evo.populations[-1, params.enhanced_target])


@dataclass
class HBTResult:
    corr: object
    g2: G2Estimate
    profile: np.ndarray          # cluster areas m = 0..m_max
    profile_raw: np.ndarray
    oracle: np.ndarray | None    # predicted ratios m = 1..m_max
    p_click: float | None
    clicks: ClickSet

    @property
    def side_ratios(self) -> np.ndarray:
        return self.profile[1:] / self.g2.plateau

    def save(self, out: Path) -> list[Path]:
        files = [out / "correlation.csv", out / "clicks.csv", out / "g2.json"]
        self.corr.to_csv(files[0])
        self.clicks.to_csv(files[1])
        _write_json(files[2], {
            "g2_zero": self.g2.value,
            "g2_zero_stderr": self.g2.stderr,
            "central_area": self.g2.central,
            "plateau_area": self.g2.plateau,
            "side_peak_areas": self.profile.tolist(),
            "side_peak_ratios": self.side_ratios.tolist(),
            "reset_oracle_ratios": None if self.oracle is None else self.oracle.tolist(),
            "p_click": self.p_click,
        })
        return files


def run_hbt(spec: ExperimentSpec) -> HBTResult:
    """Sample a long record, correlate it and compare side peaks with the reset oracle."""
    seq, params, opt = spec.seq, spec.params, spec.analysis
    m_hi = max(opt.far_peaks[1], opt.side_m_max)
    if spec.n_reps < m_hi + 2:
        raise ValueError(f"n_reps must be >= {m_hi + 2} to reach correlation peak m={m_hi}")
    if spec.seed is None:
        raise ValueError("HBT needs a seed")
    rho0 = _clean_diagonal(starting_state(spec))
    clicks = sample_trajectories(rho0, seq, params, spec.n_traj, spec.seed, n_reps=spec.n_reps,
                                 threads=spec.threads, delta_pulses=spec.delta_pulses)
    clicks = apply_detector(clicks, efficiency=opt.detector_efficiency, dark_rate=opt.dark_rate_per_ns,
                            jitter=opt.jitter_ns, background_rate=opt.background_rate_per_ns,
                            background_window=opt.background_window_ns, sync_period=seq.rep_period,
                            seed=spec.seed)
    if opt.filter_windows:
        clicks = temporal_filter(clicks, opt.filter_windows, seq.rep_period)
    span = spec.n_reps * seq.rep_period
    corr = hbt_correlate(clicks, (m_hi + 0.5) * seq.rep_period, opt.hbt_bin_ns, seed=spec.seed, record_span=span)
    g2 = g2_estimate(corr, seq.rep_period, opt.far_peaks)
    profile, raw = side_peak_areas(corr, seq.rep_period, range(opt.side_m_max + 1))
    oracle = p_click = None
    # the two-state oracle holds only while every click leaves the spin in the enhanced target
    if len(seq.resets) == 1 and seq.resets[0].target != RESET_HBAR and params.gamma_sf == 0 \
            and params.gamma_diag == 0:
        p_click = click_probability(seq, params, spec.dt, delta_pulses=spec.delta_pulses)
        oracle = reset_recovery(seq.resets[0].p_rand, p_click, opt.side_m_max)
    return HBTResult(corr, g2, profile, raw, oracle, p_click, clicks)


# -- interference --------------------------------------------------------------------------

def predicted_visibility(t2star: float, delay: float, model: CoherenceModel | str = CoherenceModel.MARKOV) -> float:
    """Ground-coherence factor after ``delay``: exp(-x) (Markov) or exp(-x^2) (Gaussian), x = delay/T2*."""
    x = delay / t2star
    return math.exp(-x) if CoherenceModel(model) is CoherenceModel.MARKOV else math.exp(-x * x)


def estimate_t2star(V: float, delay: float, model: CoherenceModel | str = CoherenceModel.MARKOV) -> float:
    """Invert a measured visibility into T2* (ns)."""
    if not 0 < V < 1:
        raise ValueError(f"visibility must lie in (0, 1) (got {V})")
    if not delay > 0:
        raise ValueError("delay must be > 0")
    if CoherenceModel(model) is CoherenceModel.MARKOV:
        return -delay / math.log(V)
    return delay / math.sqrt(-math.log(V))


@dataclass
class PairVisibility:
    pair: tuple[int, int]
    phases: np.ndarray
    intensities: np.ndarray
    fit: VisibilityFit


@dataclass
class InterferenceResult:
    pairs: list[PairVisibility]
    series: G1Series
    delay: float

    @property
    def visibilities(self) -> np.ndarray:
        return np.array([p.fit.V for p in self.pairs])

    def save(self, out: Path) -> list[Path]:
        files = []
        for p in self.pairs:
            j, k = p.pair
            scan = out / f"umi_scan_bins{j + 1}{k + 1}.csv"
            with open(scan, "w") as fh:
                fh.write("phase_rad,intensity\n")
                for ph, val in zip(p.phases.tolist(), p.intensities.tolist()):
                    fh.write(f"{ph:.17g},{val:.17g}\n")
            fit = out / f"visibility_bins{j + 1}{k + 1}.json"
            p.fit.to_json(fit)
            files += [scan, fit]
        summary = out / "visibility.json"
        vis = self.visibilities
        doc = {"delay_ns": self.delay, "pairs": [[p.pair[0] + 1, p.pair[1] + 1] for p in self.pairs],
               "V": vis.tolist()}
        if vis.size and np.all((vis > 0) & (vis < 1)):
            doc["t2star_markov_ns"] = [estimate_t2star(v, self.delay, "markov") for v in vis]
            doc["t2star_gauss_ns"] = [estimate_t2star(v, self.delay, "gauss") for v in vis]
        _write_json(summary, doc)
        return files + [summary]


def run_interference(spec: ExperimentSpec, d: int | None = None, phases=None) -> InterferenceResult:
    """Phase-scan the unbalanced interferometer for every neighbouring bin pair.

    The interferometer delay equals the bin spacing, so the late copy of bin
    k overlaps the early copy of bin k + 1 in bin k + 1's window.
    """
    seq, params = spec.seq, spec.params
    d = seq.d if d is None else d
    if d != seq.d:
        raise ValueError(f"sequence has {seq.d} pulses but d={d}")
    if d < 2:
        raise ValueError("interference needs at least two bins")
    phases = np.asarray(spec.analysis.phases_rad if phases is None else phases, dtype=float)
    if np.unique(np.round(np.mod(phases, 2 * np.pi), 12)).size < 4:
        raise ValueError("need at least 4 distinct phases")
    delay = seq.bin_spacing
    rho0 = starting_state(spec)
    grid = TimeGrid(0.0, seq.rep_period, spec.dt, delay)
    series = delayed_coherence(rho0, seq, params, grid, delay, delta_pulses=spec.delta_pulses)
    pairs = []
    for k in range(d - 1):
        a = seq.pulses[k + 1].t0
        window = (a, min(a + delay, seq.rep_period))
        vals = umi_phase_scan(series, phases, window)
        pairs.append(PairVisibility((k, k + 1), phases, vals, visibility(np.column_stack([phases, vals]))))
    return InterferenceResult(pairs, series, delay)


__all__ = [
    "AnalysisOptions", "CoherenceModel", "ExperimentSpec", "HBTResult", "InterferenceResult", "Scheme",
    "SpinPumpingResult", "WStateResult", "adiabatic_pumping_rate", "click_probability", "cw_sequence",
    "estimate_t2star", "predicted_visibility", "reset_recovery", "reset_transfer", "run_hbt",
    "run_interference", "run_spin_pumping", "run_wstate", "wstate_sequence",
]
