"""Drive pulses, repetition sequences and the amplitude -> pulse-area compiler."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .core import TimeBinState

DEFAULT_BIN_SPACING = 2.0
DEFAULT_PULSE_DURATION = 0.2
DEFAULT_REP_PERIOD = 12.5
DEFAULT_FIRST_PULSE = 1.0

SQUARE = "square"
GAUSSIAN = "gaussian"
_GAUSS_WINDOW = 3.0  # truncation at +-3 sigma
_GAUSS_NORM = math.sqrt(2 * math.pi) * erf(_GAUSS_WINDOW / math.sqrt(2))

RESET_MIXED = "mixed"
RESET_HBAR = "hbar"


class SequenceError(ValueError):
    pass


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class Pulse:
    t0: float
    duration: float
    area: float
    phase: float = 0.0
    shape: str = SQUARE

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise SequenceError(f"pulse duration must be > 0 (got {self.duration})")
        if self.area < 0:
            raise SequenceError(f"pulse area must be >= 0 (got {self.area})")
        if self.shape not in (SQUARE, GAUSSIAN):
            raise SequenceError(f"unknown pulse shape {self.shape!r}")

    @property
    def t1(self) -> float:
        return self.t0 + self.duration

    @property
    def center(self) -> float:
        return self.t0 + 0.5 * self.duration

    @property
    def peak_rabi(self) -> float:
        """Largest |Omega| reached during the pulse (rad/ns)."""
        if self.shape == SQUARE:
            return self.area / self.duration
        sigma = self.duration / (2 * _GAUSS_WINDOW)
        return self.area / (sigma * _GAUSS_NORM)

    def envelope(self, t: np.ndarray) -> np.ndarray:
        """|Omega(t)| for times already expressed in the repetition frame."""
        t = np.asarray(t, dtype=float)
        inside = (t >= self.t0) & (t < self.t1)
        if self.shape == SQUARE:
            return np.where(inside, self.area / self.duration, 0.0)
        sigma = self.duration / (2 * _GAUSS_WINDOW)
        x = (t - self.center) / sigma
        return np.where(inside, self.peak_rabi * np.exp(-0.5 * x * x), 0.0)


@dataclass(frozen=True)
class ResetPulse:
    """Instantaneous non-resonant reset acting on the ground subspace.

    With probability ``p_rand`` the ground-state population is replaced by
    the maximally mixed ground state (``target="mixed"``) or, for the ideal
    spin initialisation, by |hbar> (``target="hbar"``).
    """

    t0: float
    p_rand: float
    target: str = RESET_MIXED

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_rand <= 1.0:
            raise SequenceError(f"p_rand must lie in [0, 1] (got {self.p_rand})")
        if self.target not in (RESET_MIXED, RESET_HBAR):
            raise SequenceError(f"unknown reset target {self.target!r}")


@dataclass(frozen=True)
class PulseSequence:
    pulses: tuple[Pulse, ...] = ()
    resets: tuple[ResetPulse, ...] = ()
    bin_spacing: float = DEFAULT_BIN_SPACING
    rep_period: float = DEFAULT_REP_PERIOD

    def __post_init__(self) -> None:
        object.__setattr__(self, "pulses", tuple(self.pulses))
        object.__setattr__(self, "resets", tuple(self.resets))
        if not self.rep_period > 0:
            raise SequenceError("rep_period must be > 0")
        prev_end = -np.inf
        for p in self.pulses:
            if p.t0 < prev_end - 1e-12:
                raise SequenceError(f"pulse at t0={p.t0} overlaps or is out of order")
            if p.t0 < 0 or p.t1 > self.rep_period + 1e-12:
                raise SequenceError(f"pulse at t0={p.t0} falls outside one repetition period")
            prev_end = p.t1
        times = [r.t0 for r in self.resets]
        if times != sorted(times):
            raise SequenceError("resets must be time-ordered")
        if any(t < 0 or t >= self.rep_period for t in times):
            raise SequenceError("reset times must lie in [0, rep_period)")

    @property
    def d(self) -> int:
        return len(self.pulses)

    @property
    def areas(self) -> np.ndarray:
        return np.array([p.area for p in self.pulses])

    @property
    def phases(self) -> np.ndarray:
        return np.array([p.phase for p in self.pulses])

    @property
    def peak_rabi(self) -> float:
        return max((p.peak_rabi for p in self.pulses), default=0.0)

    def bin_windows(self) -> list[tuple[float, float]]:
        """Detection window of each pulse's photon, in the repetition frame.

        A window opens with its pulse and closes at the next pulse (or one
        bin spacing later for the last one).
        """
        out = []
        for k, p in enumerate(self.pulses):
            end = p.t0 + self.bin_spacing
            if k + 1 < len(self.pulses):
                end = min(end, self.pulses[k + 1].t0)
            out.append((p.t0, min(end, self.rep_period)))
        return out

    # -- serialisation ----------------------------------------------------
    def to_dict(self) -> dict:
        resets = []
        for r in self.resets:
            item = {"t0": r.t0, "p_rand": r.p_rand}
            if r.target != RESET_MIXED:
                item["target"] = r.target
            resets.append(item)
        return {
            "rep_period_ns": self.rep_period,
            "bin_spacing_ns": self.bin_spacing,
            "pulses": [
                {"t0": p.t0, "dur": p.duration, "area_rad": p.area, "phase_rad": p.phase, "shape": p.shape}
                for p in self.pulses
            ],
            "resets": resets,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PulseSequence":
        pulses = [
            Pulse(float(p["t0"]), float(p["dur"]), float(p["area_rad"]), float(p.get("phase_rad", 0.0)),
                  p.get("shape", SQUARE))
            for p in doc.get("pulses", [])
        ]
        resets = [ResetPulse(float(r["t0"]), float(r["p_rand"]), r.get("target", RESET_MIXED))
                  for r in doc.get("resets", [])]
        return cls(tuple(pulses), tuple(resets),
                   float(doc.get("bin_spacing_ns", DEFAULT_BIN_SPACING)),
                   float(doc.get("rep_period_ns", DEFAULT_REP_PERIOD)))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PulseSequence":
        return cls.from_dict(json.loads(Path(path).read_text()))


def omega_at(seq: PulseSequence, t):
    """Complex Rabi amplitude Omega(t) e^{i phi} (rad/ns).

    The sequence repeats every ``rep_period``; ``t`` may be a scalar or array.
    """
    scalar = np.isscalar(t)
    tt = np.mod(np.atleast_1d(np.asarray(t, dtype=float)), seq.rep_period)
    out = np.zeros(tt.shape, dtype=complex)
    for p in seq.pulses:
        env = p.envelope(tt)
        if p.phase:
            out += env * np.exp(1j * p.phase)
        else:
            out += env
    return complex(out[0]) if scalar else out


def excitation_probabilities(target_probs, efficiency: float = 1.0) -> np.ndarray:
    """Per-pulse transfer probability q_k = p_k / (efficiency R_k), R_k the remaining population.

    ``efficiency`` < 1 is the fraction of excitations that leave through the
    detected channel; the rest return to the driven ground state, so R_k
    still drops by exactly p_k per pulse.
    """
    if not 0 < efficiency <= 1:
        raise CompileError(f"efficiency must lie in (0, 1] (got {efficiency})")
    probs = np.asarray(target_probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0:
        raise CompileError("need at least one target probability")
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise CompileError("target probabilities must be finite and >= 0")
    total = float(np.sum(probs))
    if total > 1 + 1e-12:
        raise CompileError(f"target probabilities sum to {total:.6g} > 1")
    leftover = max(0.0, 1.0 - total)
    # remaining population before pulse k, as a tail sum for accuracy near R -> 0
    remaining = leftover + np.cumsum(probs[::-1])[::-1]
    q = np.zeros_like(probs)
    for k, (p, r) in enumerate(zip(probs, remaining)):
        if p == 0:
            continue
        if r <= 1e-15:
            if p <= 1e-12:  # rounding residue of a target that already spent everything
                continue
            raise CompileError(f"bin {k} asks for p={p} but no population remains")
        need = p / (efficiency * r)
        if need > 1 + 1e-12:
            raise CompileError(f"bin {k} needs transfer {need:.6g} > 1 at efficiency {efficiency:g}")
        q[k] = min(1.0, need)
    return q


def pulse_areas(target_probs, efficiency: float = 1.0) -> np.ndarray:
    return 2 * np.arcsin(np.sqrt(excitation_probabilities(target_probs, efficiency)))


def compile_sequence(target_probs, phases=None, bin_spacing: float = DEFAULT_BIN_SPACING,
                     pulse_duration: float = DEFAULT_PULSE_DURATION, *,
                     first_pulse: float = DEFAULT_FIRST_PULSE, shape: str = SQUARE,
                     rep_period: float = DEFAULT_REP_PERIOD,
                     reset: ResetPulse | None = None, efficiency: float = 1.0) -> PulseSequence:
    """Pulse sequence whose lossless emission probabilities equal ``target_probs``.

    Pulse k rotates the remaining |hbar> population so that a fraction
    p_k / R_k is transferred, R_k being what earlier pulses left behind.
    With sum(p) < 1 this gives the weak carved sequence; with sum(p) = 1 the
    last non-empty pulse is a full pi rotation. ``efficiency`` compensates
    a decay branch that returns the spin instead of emitting.
    """
    probs = np.asarray(target_probs, dtype=float)
    areas = pulse_areas(probs, efficiency)
    if phases is None:
        phases = np.zeros(probs.size)
    phases = np.asarray(phases, dtype=float)
    if phases.shape != probs.shape:
        raise CompileError("phases and target_probs must have the same length")
    if pulse_duration > bin_spacing:
        raise CompileError("pulse_duration exceeds bin_spacing")
    pulses = tuple(
        Pulse(first_pulse + k * bin_spacing, pulse_duration, float(a), float(ph), shape)
        for k, (a, ph) in enumerate(zip(areas, phases))
    )
    resets = () if reset is None else (reset,)
    return PulseSequence(pulses, resets, bin_spacing, rep_period)


def sequence_amplitudes(seq: PulseSequence) -> TimeBinState:
    """Photonic state produced by ideal instantaneous pulses from |hbar>."""
    half = seq.areas / 2
    amps = np.empty(seq.d, dtype=complex)
    survive = 1.0
    for k in range(seq.d):
        amps[k] = np.exp(1j * seq.pulses[k].phase) * np.sin(half[k]) * survive
        survive *= np.cos(half[k])
    return TimeBinState.normalized(amps, survive)


def round_trip(state: TimeBinState, bin_spacing: float = DEFAULT_BIN_SPACING,
               pulse_duration: float = DEFAULT_PULSE_DURATION, **kwargs) -> PulseSequence:
    """Sequence that regenerates ``state`` (vacuum amplitude must be real, >= 0)."""
    if abs(state.vac.imag) > 1e-12 or state.vac.real < -1e-12:
        raise CompileError("vacuum amplitude must be real and non-negative")
    probs = np.abs(state.amps) ** 2
    phases = np.where(np.abs(state.amps) > 0, np.angle(state.amps), 0.0)
    # rescale so the tail sums see the exact vacuum weight
    total = float(np.sum(probs)) + state.vac.real ** 2
    return compile_sequence(probs / total, phases, bin_spacing, pulse_duration, **kwargs)
