"""Measurement-chain emulation: histograms, HBT correlations, filtering, UMI."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels.rng import SALT_BACKGROUND, SALT_DETECTOR, base_key, stream_keys, uniforms
from .core import Channel
from .dynamics.correlations import G1Series
from .dynamics.master import OffGridError
from .dynamics.trajectories import ClickSet
from .fitting import FitError, FitResult, fit_sinusoid

CSV_HEADER = ("bin_start_ns", "bin_end_ns", "value")
DEFAULT_FAR_PEAKS = (5, 10)


def _write_bins(path, edges, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for a, b, v in zip(edges[:-1].tolist(), edges[1:].tolist(), np.asarray(values, dtype=float).tolist()):
            w.writerow((f"{a:.17g}", f"{b:.17g}", f"{v:.17g}"))


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    density: bool = False

    def __post_init__(self) -> None:
        self.edges = np.asarray(self.edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("histogram edges must be strictly increasing")
        if self.counts.shape != (self.edges.size - 1,):
            raise ValueError("counts must have one entry per bin")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def window_sum(self, start: float, end: float) -> float:
        c = self.centers
        return float(self.counts[(c >= start) & (c < end)].sum())

    def to_csv(self, path) -> None:
        _write_bins(path, self.edges, self.counts)


@dataclass
class CorrelationHistogram:
    """Coincidences vs signed delay; ``counts`` may carry an exposure correction,
    ``raw`` are the integer pair counts used for Poisson errors."""

    edges: np.ndarray
    counts: np.ndarray
    raw: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def max_tau(self) -> float:
        return float(self.edges[-1])

    def cluster(self, center: float, half_width: float) -> tuple[float, float]:
        """(corrected area, raw count) of bins with |tau - center| < half_width."""
        sel = np.abs(self.centers - center) < half_width
        return float(self.counts[sel].sum()), float(self.raw[sel].sum())

    def to_csv(self, path) -> None:
        _write_bins(path, self.edges, self.counts)


@dataclass(frozen=True)
class UMIConfig:
    delay: float
    phase: float = 0.0

    def __post_init__(self) -> None:
        if not self.delay > 0:
            raise ValueError("UMI delay must be > 0")


# -- histograms and filtering -------------------------------------------------------

def fold(times: np.ndarray, sync_period: float) -> np.ndarray:
    return np.mod(times, sync_period)


def time_resolved_histogram(clicks: ClickSet, channel: Channel | None = Channel.ENHANCED,
                            bin_width: float = 0.05, sync_period: float = 12.5) -> Histogram:
    """Click counts folded modulo ``sync_period``."""
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    n = int(math.ceil(sync_period / bin_width - 1e-9))
    edges = np.minimum(bin_width * np.arange(n + 1), sync_period)
    sel = clicks if channel is None else clicks.channel(channel)
    idx = np.minimum((fold(sel.times, sync_period) / bin_width).astype(np.int64), n - 1)
    return Histogram(edges, np.bincount(idx, minlength=n).astype(float))


def _check_windows(windows) -> list[tuple[float, float]]:
    wins = sorted((float(a), float(b)) for a, b in windows)
    for (a, b), (c, _) in zip(wins, wins[1:]):
        if c < b:
            raise ValueError("filter windows must be disjoint")
    for a, b in wins:
        if not b > a:
            raise ValueError("filter windows need end > start")
    return wins


def window_counts(clicks: ClickSet, windows, sync_period: float, channel: Channel | None = Channel.ENHANCED):
    """Exact click count in each window (no binning)."""
    sel = clicks if channel is None else clicks.channel(channel)
    ft = fold(sel.times, sync_period)
    return np.array([np.count_nonzero((ft >= a) & (ft < b)) for a, b in windows], dtype=float)


def temporal_filter(clicks: ClickSet, windows, sync_period: float) -> ClickSet:
    """Keep clicks whose folded time lies in one of the windows [start, end)."""
    wins = _check_windows(windows)
    ft = fold(clicks.times, sync_period)
    keep = np.zeros(len(ft), dtype=bool)
    for a, b in wins:
        keep |= (ft >= a) & (ft < b)
    return clicks.select(keep)


# -- optional detector model ------------------------------------------------------------

def apply_detector(clicks: ClickSet, *, efficiency: float = 1.0, dark_rate: float = 0.0,
                   jitter: float = 0.0, background_rate: float = 0.0, background_window=None,
                   sync_period: float = 12.5, seed: int = 0) -> ClickSet:
    """Loss, timing jitter, dark counts and a windowed Poissonian background.

    All defaults are off. ``background_rate`` (1/ns) is confined to
    ``background_window`` = (start, end) in the repetition frame, e.g. the
    reset-pulse era. Added clicks carry the ENHANCED tag: the detector cannot
    tell them apart from signal photons.
    """
    if not 0 <= efficiency <= 1:
        raise ValueError("efficiency must be in [0, 1]")
    if min(dark_rate, jitter, background_rate) < 0:
        raise ValueError("rates and jitter must be >= 0")
    rng = np.random.default_rng([seed, SALT_BACKGROUND])
    traj, times, chans = clicks.traj, clicks.times, clicks.channels
    if efficiency < 1:
        keep = rng.random(len(times)) < efficiency
        traj, times, chans = traj[keep], times[keep], chans[keep]
    if jitter > 0:
        times = times + rng.normal(0.0, jitter, len(times))
    extra_t, extra_r = [], []
    span = clicks.duration
    if dark_rate > 0 and span > 0:
        n = rng.poisson(dark_rate * span, clicks.n_traj)
        extra_r.append(np.repeat(np.arange(clicks.n_traj), n))
        extra_t.append(rng.random(n.sum()) * span)
    if background_rate > 0 and span > 0:
        a, b = background_window if background_window is not None else (0.0, sync_period)
        reps = int(round(span / sync_period))
        n = rng.poisson(background_rate * (b - a), (clicks.n_traj, reps))
        rows = np.repeat(np.arange(clicks.n_traj), n.sum(axis=1))
        rep_idx = np.repeat(np.tile(np.arange(reps), clicks.n_traj), n.ravel())
        extra_r.append(rows)
        extra_t.append(rep_idx * sync_period + a + rng.random(rows.size) * (b - a))
    if extra_t:
        traj = np.concatenate([traj, *extra_r]).astype(np.int64)
        times = np.concatenate([times, *extra_t])
        chans = np.concatenate([chans, np.full(sum(len(e) for e in extra_t), int(Channel.ENHANCED))])
    order = np.lexsort((times, traj))
    return ClickSet(traj[order], times[order], chans[order].astype(np.int64), clicks.n_traj,
                    clicks.seed, clicks.duration)


# -- HBT ------------------------------------------------------------------------------------

def detector_assignment(clicks: ClickSet, seed: int) -> np.ndarray:
    """0/1 detector for each click from a 50:50 beam splitter.

    Draw k of trajectory i decides the k-th click of that trajectory, so the
    assignment does not depend on how the click table was produced.
    """
    if len(clicks) == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.searchsorted(clicks.traj, clicks.traj, side="left")
    pos = np.arange(len(clicks)) - starts
    keys = stream_keys(base_key(seed, SALT_DETECTOR), clicks.traj)
    return (uniforms(keys, pos) < 0.5).astype(np.int64)


def hbt_correlate(clicks: ClickSet, max_tau: float, bin_width: float, *, seed: int = 0,
                  record_span: float | None = None, backend: str | None = None) -> CorrelationHistogram:
    """Start-stop coincidences between two detectors behind a 50:50 splitter.

    Pairs come from the same trajectory only; both orderings are counted so
    the histogram is exactly symmetric. With ``record_span`` the counts are
    divided by the overlap fraction (T - |tau|) / T of a finite record.
    """
    if not (bin_width > 0 and max_tau > 0):
        raise ValueError("max_tau and bin_width must be > 0")
    nhalf = int(math.ceil(max_tau / bin_width - 1e-9))
    edges = bin_width * np.arange(-nhalf, nhalf + 1)
    det = detector_assignment(clicks, seed)
    raw = _kernels.pair_histogram(clicks.traj, clicks.times, det, nhalf * bin_width, bin_width, nhalf,
                                  backend=backend).astype(float)
    counts = raw.copy()
    if record_span is not None:
        centers = 0.5 * (edges[:-1] + edges[1:])
        frac = (record_span - np.abs(centers)) / record_span
        if np.any(frac <= 0):
            raise ValueError("record_span must exceed max_tau")
        counts = raw / frac
    return CorrelationHistogram(edges, counts, raw)


def _far_range(corr: CorrelationHistogram, rep_period: float, m_hi: int) -> None:
    if (m_hi + 0.5) * rep_period > corr.max_tau + 1e-9:
        raise ValueError(f"correlation spans {corr.max_tau:g} ns; need {(m_hi + 0.5) * rep_period:g} ns "
                         f"to reach peak m={m_hi}")


def side_peak_areas(corr: CorrelationHistogram, rep_period: float, ms) -> tuple[np.ndarray, np.ndarray]:
    """Mean of the +m and -m cluster areas, and the summed raw counts."""
    areas, raws = [], []
    for m in ms:
        if m == 0:
            a, r = corr.cluster(0.0, rep_period / 2)
            areas.append(a)
            raws.append(r)
            continue
        ap, rp = corr.cluster(m * rep_period, rep_period / 2)
        an, rn = corr.cluster(-m * rep_period, rep_period / 2)
        areas.append(0.5 * (ap + an))
        raws.append(rp + rn)
    return np.array(areas), np.array(raws)


@dataclass
class G2Estimate:
    value: float
    stderr: float
    central: float
    plateau: float


def g2_estimate(corr: CorrelationHistogram, rep_period: float, far=DEFAULT_FAR_PEAKS) -> G2Estimate:
    m_lo, m_hi = far
    if not 1 <= m_lo <= m_hi:
        raise ValueError("far peak range must satisfy 1 <= lo <= hi")
    _far_range(corr, rep_period, m_hi)
    central, c_raw = corr.cluster(0.0, rep_period / 2)
    areas, raws = side_peak_areas(corr, rep_period, range(m_lo, m_hi + 1))
    plateau = float(areas.mean())
    if plateau <= 0:
        raise ValueError("far correlation peaks are empty; cannot normalise g2(0)")
    g2 = central / plateau
    # Poisson errors on the raw counts, scaled to the corrected areas
    per_peak = raws.sum() / (2 * areas.size)
    if c_raw > 0:
        err = g2 * math.hypot(1 / math.sqrt(c_raw), 1 / math.sqrt(raws.sum()))
    else:
        # one-count resolution when the central cluster is empty
        err = 1.0 / per_peak if per_peak > 0 else 0.0
    return G2Estimate(float(g2), float(err), central, plateau)


def g2_zero(corr: CorrelationHistogram, rep_period: float, far=DEFAULT_FAR_PEAKS) -> float:
    """Central-cluster area over the mean far-peak area (peaks m in ``far`` on both sides)."""
    return g2_estimate(corr, rep_period, far).value


def side_peak_profile(corr: CorrelationHistogram, rep_period: float, m_max: int) -> np.ndarray:
    """Cluster area for m = 0..m_max (mean of both signs for m > 0)."""
    _far_range(corr, rep_period, m_max)
    return side_peak_areas(corr, rep_period, range(m_max + 1))[0]


# -- interferometer -------------------------------------------------------------------------

def umi_intensity(series: G1Series, cfg: UMIConfig, tol: float = 1e-9) -> Histogram:
    """Output-port photon number per grid step of a 50:50 unbalanced Michelson.

    I_out(t) = I(t)/4 + I(t - delay)/4 + Re[e^{i phase} G1(t - delay, delay)]/2,
    integrated over each grid interval with the trapezoid rule.
    """
    if abs(cfg.delay - series.delay) > tol * max(1.0, cfg.delay):
        raise OffGridError(f"UMI delay {cfg.delay:g} ns is not on the G1 delay grid ({series.delay:g} ns)")
    inten = series.intensity
    late = series.shifted(inten)
    cross = series.shifted(series.g1)
    out = 0.25 * inten + 0.25 * late + 0.5 * np.real(np.exp(1j * cfg.phase) * cross)
    floor = -tol * max(float(np.max(np.abs(out))), 1e-300)
    if np.min(out) < floor:
        raise ArithmeticError(f"interferometer intensity went negative ({np.min(out):.3e})")
    out = np.maximum(out, 0.0)
    t = series.times
    per_step = 0.5 * (out[:-1] + out[1:]) * np.diff(t)
    return Histogram(t, per_step)


def umi_phase_scan(series: G1Series, phases, window: tuple[float, float]) -> np.ndarray:
    """Integrated output in ``window`` for each interferometer phase."""
    out = []
    for ph in phases:
        h = umi_intensity(series, UMIConfig(series.delay, float(ph)))
        a, b = window
        sel = (h.edges[:-1] >= a - 1e-12) & (h.edges[1:] <= b + 1e-12)
        out.append(float(h.counts[sel].sum()))
    return np.array(out)


@dataclass
class VisibilityFit:
    A: float
    B: float
    phi0_rad: float
    V: float
    stderr_V: float

    def to_json(self, path=None) -> str:
        text = json.dumps({"A": self.A, "B": self.B, "phi0_rad": self.phi0_rad, "V": self.V,
                           "stderr_V": self.stderr_V}, indent=2) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def visibility(phase_scan, sigma=None) -> VisibilityFit:
    """Fringe visibility B/A from (phase, intensity) pairs."""
    scan = np.asarray(phase_scan, dtype=float)
    if scan.ndim != 2 or scan.shape[1] != 2:
        raise ValueError("phase_scan must be a list of (phase, intensity) pairs")
    fit: FitResult = fit_sinusoid(scan[:, 0], scan[:, 1], sigma)
    p = fit.params
    return VisibilityFit(p["A"], p["B"], p["phi0"], p["V"], fit.stderr["V"])


__all__ = [
    "CSV_HEADER", "CorrelationHistogram", "FitError", "G2Estimate", "Histogram", "UMIConfig",
    "VisibilityFit", "apply_detector", "detector_assignment", "g2_estimate", "g2_zero", "hbt_correlate",
    "side_peak_areas", "side_peak_profile", "temporal_filter", "time_resolved_histogram", "umi_intensity",
    "umi_phase_scan", "visibility", "window_counts",
]
