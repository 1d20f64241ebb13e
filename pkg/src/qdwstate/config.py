"""JSON run documents: defaults, presets and aggregated validation.

A run document has four optional sections::

    {
      "params":     {...},   # SystemParams fields, plus t2star_ns as a shorthand
      "sequence":   {...},   # generated ("scheme", "d", ...), explicit ("pulses"), or "cw"
      "simulation": {...},   # n_traj, n_reps, dt_ns, delta_pulses, estimator, initial, seed
      "analysis":   {...}    # AnalysisOptions fields
    }

Every missing value comes from ``DEFAULTS``. ``validate_config`` checks the
whole document and reports every problem at once. See docs/config.md for the
field table.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, fields

import numpy as np

from .core import GROUND, H, HBAR, SystemParams
from .experiments import AnalysisOptions, ExperimentSpec, Scheme, cw_sequence
from .pulses import (GAUSSIAN, RESET_HBAR, RESET_MIXED, SQUARE, PulseSequence, ResetPulse,
                     compile_sequence)

EXPERIMENTS = ("spin-pumping", "wstate", "hbt", "interference", "compile-pulses")
STOCHASTIC = {"hbt": True, "wstate": None}  # wstate is stochastic only with the trajectory estimator
U64_MAX = 2 ** 64 - 1

DEFAULTS: dict = {
    "params": {
        "gamma_enh": 20.0,
        "gamma_diag": 0.8,
        "gamma_deph": 0.0,
        "sigma_quasistatic": 0.0,
        "gamma_sf": 0.0,
        "delta_drive": 0.0,
        "delta_h": 0.0,
        "dephasing_mode": "markov",
        "enhanced_target": "h",
    },
    "sequence": {
        "scheme": "weak",
        "d": 3,
        "sum_p": 0.3,
        "target_probs": None,
        "phases_rad": None,
        "bin_spacing_ns": 2.0,
        "pulse_duration_ns": 0.2,
        "first_pulse_ns": 1.0,
        "rep_period_ns": 12.5,
        "shape": "square",
        "p_rand": 1.0,
        "reset_t0_ns": None,
        "compensate_branching": False,
    },
    "cw": {"omega_rad_per_ns": 8.0, "duration_ns": 2.0},
    "simulation": {
        "n_traj": 10000,
        "n_reps": 1,
        "dt_ns": 0.002,
        "delta_pulses": False,
        "estimator": "trajectories",
        "initial": "mixed",
        "seed": None,
    },
    "analysis": {
        "hist_bin_ns": 0.02,
        "hbt_bin_ns": 0.05,
        "far_peaks": [5, 10],
        "side_m_max": 10,
        "phases_rad": [2 * math.pi * k / 8 for k in range(8)],
        "filter_windows_ns": None,
        "detector_efficiency": 1.0,
        "dark_rate_per_ns": 0.0,
        "jitter_ns": 0.0,
        "background_rate_per_ns": 0.0,
        "background_window_ns": None,
        "fit_model": "auto",
        "fit_start_ns": None,
    },
}

_TARGETS = {"h": H, "hbar": HBAR}

PRESETS: dict[str, dict] = {
    "ideal-w3": {
        "params": {"gamma_enh": 20.0, "gamma_diag": 0.0},
        "sequence": {"scheme": "deterministic", "d": 3},
        "simulation": {"delta_pulses": True, "estimator": "master", "dt_ns": 0.004},
    },
    "weak-w3": {
        "params": {"gamma_enh": 20.0, "gamma_diag": 0.8},
        "sequence": {"scheme": "weak", "d": 3, "sum_p": 0.3, "pulse_duration_ns": 0.01,
                     "compensate_branching": True},
        "simulation": {"n_traj": 100000, "n_reps": 10, "dt_ns": 0.002},
    },
    "cavity-pumping": {
        "params": {"gamma_enh": 20.0, "gamma_diag": 0.8},
        "cw": {"omega_rad_per_ns": 8.206233841676342, "duration_ns": 2.5},
        "simulation": {"dt_ns": 0.0025, "initial": "mixed"},
        "analysis": {"fit_model": "exponential"},
    },
    "no-cavity-pumping": {
        "params": {"gamma_enh": 0.3001214402931041, "gamma_diag": 0.3001214402931041},
        "cw": {"omega_rad_per_ns": math.pi, "duration_ns": 40.0},
        "simulation": {"dt_ns": 0.01, "initial": "mixed"},
        "analysis": {"fit_model": "oscillatory"},
    },
    "interference": {
        "params": {"gamma_enh": 50.0, "gamma_diag": 0.0, "gamma_deph": 1 / 3.7},
        "sequence": {"scheme": "deterministic", "d": 3, "bin_spacing_ns": 1.34, "pulse_duration_ns": 0.001},
        "simulation": {"dt_ns": 0.001},
    },
    "hbt-reset": {
        "params": {"gamma_enh": 20.0, "gamma_diag": 0.0},
        "sequence": {"scheme": "weak", "d": 3, "sum_p": 0.3, "pulse_duration_ns": 0.01, "p_rand": 0.5},
        "simulation": {"n_traj": 20000, "n_reps": 12, "dt_ns": 0.002},
    },
}


class ConfigError(ValueError):
    """Aggregated validation failure; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


@dataclass
class ResolvedConfig:
    spec: ExperimentSpec
    document: dict      # fully resolved, defaults filled; echoed to inputs.json
    scheme: Scheme


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def _merge(section: str, doc: dict, errors: list[str]) -> dict:
    given = doc.get(section, {})
    if given is None:
        given = {}
    if not isinstance(given, dict):
        errors.append(f"{section}: must be an object")
        return copy.deepcopy(DEFAULTS[section])
    out = copy.deepcopy(DEFAULTS[section])
    for key, value in given.items():
        if key not in out:
            errors.append(f"{section}.{key}: unknown field")
        else:
            out[key] = value
    return out


def _number(sec: str, key: str, value, errors: list[str], *, lo=None, hi=None, lo_open=False,
            integer=False, allow_none=False):
    name = f"{sec}.{key}"
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{name}: expected a number (got {value!r})")
        return None
    if integer and (not float(value).is_integer()):
        errors.append(f"{name}: expected an integer (got {value!r})")
        return None
    if not math.isfinite(value):
        errors.append(f"{name}: must be finite")
        return None
    if lo is not None and (value <= lo if lo_open else value < lo):
        errors.append(f"{name}: must be {'>' if lo_open else '>='} {lo} (got {value})")
        return None
    if hi is not None and value > hi:
        errors.append(f"{name}: must be <= {hi} (got {value})")
        return None
    return int(value) if integer else float(value)


def _resolve_params(raw: dict, given: dict, errors: list[str]) -> SystemParams | None:
    sec = "params"
    vals = {}
    for key in ("gamma_enh", "gamma_diag", "gamma_deph", "sigma_quasistatic", "gamma_sf"):
        vals[key] = _number(sec, key, raw[key], errors, lo=0.0)
    for key in ("delta_drive", "delta_h"):
        vals[key] = _number(sec, key, raw[key], errors)
    mode = raw["dephasing_mode"]
    if mode not in ("markov", "quasistatic"):
        errors.append(f"params.dephasing_mode: must be 'markov' or 'quasistatic' (got {mode!r})")
    vals["dephasing_mode"] = mode
    tgt = raw["enhanced_target"]
    if tgt in _TARGETS:
        vals["enhanced_target"] = _TARGETS[tgt]
    elif tgt in GROUND and not isinstance(tgt, bool):
        vals["enhanced_target"] = int(tgt)
    else:
        errors.append(f"params.enhanced_target: must be 'h' or 'hbar' (got {tgt!r})")
    if "t2star_ns" in given:
        t2 = _number(sec, "t2star_ns", given["t2star_ns"], errors, lo=0.0, lo_open=True)
        if t2 is not None:
            if "gamma_deph" in given or "sigma_quasistatic" in given:
                errors.append("params.t2star_ns: give either t2star_ns or the dephasing rate, not both")
            elif mode == "quasistatic":
                vals["sigma_quasistatic"] = math.sqrt(2.0) / t2
            else:
                vals["gamma_deph"] = 1.0 / t2
    if any(v is None for v in vals.values()):
        return None
    if vals["gamma_enh"] + vals["gamma_diag"] <= 0:
        errors.append("params: gamma_enh + gamma_diag must be > 0")
        return None
    if mode == "markov" and vals["sigma_quasistatic"]:
        errors.append("params.sigma_quasistatic: must be 0 in markov dephasing mode")
        return None
    if mode == "quasistatic" and vals["gamma_deph"]:
        errors.append("params.gamma_deph: must be 0 in quasistatic dephasing mode")
        return None
    try:
        return SystemParams(**vals)
    except ValueError as exc:
        errors.append(f"params: {exc}")
        return None


def _resolve_sequence(raw: dict, params: SystemParams | None, errors: list[str]):
    sec = "sequence"
    n_err = len(errors)
    try:
        scheme = Scheme(raw["scheme"])
    except ValueError:
        errors.append(f"sequence.scheme: must be 'weak' or 'deterministic' (got {raw['scheme']!r})")
        scheme = None
    spacing = _number(sec, "bin_spacing_ns", raw["bin_spacing_ns"], errors, lo=0.0, lo_open=True)
    dur = _number(sec, "pulse_duration_ns", raw["pulse_duration_ns"], errors, lo=0.0, lo_open=True)
    first = _number(sec, "first_pulse_ns", raw["first_pulse_ns"], errors, lo=0.0)
    period = _number(sec, "rep_period_ns", raw["rep_period_ns"], errors, lo=0.0, lo_open=True)
    p_rand = _number(sec, "p_rand", raw["p_rand"], errors, lo=0.0, hi=1.0)
    reset_t0 = _number(sec, "reset_t0_ns", raw["reset_t0_ns"], errors, lo=0.0, allow_none=True)
    efficiency = 1.0
    if not isinstance(raw["compensate_branching"], bool):
        errors.append("sequence.compensate_branching: expected true or false")
    elif raw["compensate_branching"]:
        if params is None:
            errors.append("sequence.compensate_branching: needs valid params")
        else:
            efficiency = params.gamma_enh / params.gamma_total
    if raw["shape"] not in (SQUARE, GAUSSIAN):
        errors.append(f"sequence.shape: must be 'square' or 'gaussian' (got {raw['shape']!r})")
    probs = raw["target_probs"]
    if probs is not None:
        if not isinstance(probs, list) or not probs:
            errors.append("sequence.target_probs: expected a non-empty list")
            probs = None
        else:
            bad = [p for p in probs if isinstance(p, bool) or not isinstance(p, (int, float)) or not 0 <= p <= 1]
            if bad:
                errors.append(f"sequence.target_probs: every entry must lie in [0, 1] (bad: {bad})")
                probs = None
            elif sum(probs) > 1 + 1e-12:
                errors.append(f"sequence.target_probs: sum must be <= 1 (got {sum(probs):.6g})")
                probs = None
    else:
        d = _number(sec, "d", raw["d"], errors, lo=1, integer=True)
        sum_p = _number(sec, "sum_p", raw["sum_p"], errors, lo=0.0, hi=1.0)
        if d is not None and sum_p is not None and scheme is not None:
            total = 1.0 if scheme is Scheme.DETERMINISTIC else sum_p
            probs = [total / d] * d
    if probs is not None and scheme is Scheme.DETERMINISTIC and abs(sum(probs) - 1) > 1e-9:
        errors.append(f"sequence.target_probs: deterministic scheme needs sum = 1 (got {sum(probs):.6g})")
    phases = raw["phases_rad"]
    if phases is not None and probs is not None and (not isinstance(phases, list) or len(phases) != len(probs)):
        errors.append("sequence.phases_rad: needs one phase per pulse")
    if len(errors) > n_err:
        return None, scheme, None
    if dur > spacing:
        errors.append(f"sequence.pulse_duration_ns: must be <= bin_spacing_ns ({spacing})")
    last_end = first + (len(probs) - 1) * spacing + dur
    if last_end > period:
        errors.append(f"sequence: pulses end at {last_end:.6g} ns, past rep_period_ns ({period})")
    if scheme is Scheme.DETERMINISTIC:
        reset = ResetPulse(0.0, 1.0, RESET_HBAR)
        if first <= 0:
            errors.append("sequence.first_pulse_ns: must be > 0 so the spin preparation precedes the pulses")
    else:
        t_reset = period - 1.5 if reset_t0 is None else reset_t0
        if not last_end <= t_reset < period:
            errors.append(f"sequence.reset_t0_ns: reset at {t_reset:.6g} ns must fall after the last pulse "
                          f"and before rep_period_ns")
        reset = ResetPulse(t_reset, p_rand, RESET_MIXED) if 0 <= p_rand <= 1 else None
    if len(errors) > n_err:
        return None, scheme, probs
    try:
        seq = compile_sequence(np.asarray(probs, dtype=float), phases, spacing, dur, first_pulse=first,
                               shape=raw["shape"], rep_period=period, reset=reset, efficiency=efficiency)
    except ValueError as exc:
        errors.append(f"sequence: {exc}")
        return None, scheme, probs
    return seq, scheme, probs


def _resolve_explicit(given: dict, errors: list[str]):
    try:
        return PulseSequence.from_dict(given)
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"sequence: invalid explicit pulse list: {exc}")
        return None


def _resolve_cw(raw: dict, errors: list[str]):
    om = _number("cw", "omega_rad_per_ns", raw["omega_rad_per_ns"], errors, lo=0.0)
    dur = _number("cw", "duration_ns", raw["duration_ns"], errors, lo=0.0, lo_open=True)
    if om is None or dur is None:
        return None
    return cw_sequence(om, dur)


def _resolve_analysis(raw: dict, errors: list[str]) -> AnalysisOptions | None:
    sec = "analysis"
    n_err = len(errors)
    vals = {
        "hist_bin_ns": _number(sec, "hist_bin_ns", raw["hist_bin_ns"], errors, lo=0.0, lo_open=True),
        "hbt_bin_ns": _number(sec, "hbt_bin_ns", raw["hbt_bin_ns"], errors, lo=0.0, lo_open=True),
        "side_m_max": _number(sec, "side_m_max", raw["side_m_max"], errors, lo=1, integer=True),
        "detector_efficiency": _number(sec, "detector_efficiency", raw["detector_efficiency"], errors,
                                       lo=0.0, hi=1.0),
        "dark_rate_per_ns": _number(sec, "dark_rate_per_ns", raw["dark_rate_per_ns"], errors, lo=0.0),
        "jitter_ns": _number(sec, "jitter_ns", raw["jitter_ns"], errors, lo=0.0),
        "background_rate_per_ns": _number(sec, "background_rate_per_ns", raw["background_rate_per_ns"],
                                          errors, lo=0.0),
        "fit_start_ns": _number(sec, "fit_start_ns", raw["fit_start_ns"], errors, lo=0.0, allow_none=True),
    }
    far = raw["far_peaks"]
    if (not isinstance(far, list) or len(far) != 2 or not all(isinstance(m, int) and not isinstance(m, bool)
                                                              for m in far) or not 1 <= far[0] <= far[1]):
        errors.append(f"analysis.far_peaks: expected [m_lo, m_hi] with 1 <= m_lo <= m_hi (got {far!r})")
    else:
        vals["far_peaks"] = tuple(far)
    phases = raw["phases_rad"]
    if not isinstance(phases, list) or len(phases) < 4:
        errors.append("analysis.phases_rad: need at least 4 phases")
    elif np.unique(np.round(np.mod(np.asarray(phases, dtype=float), 2 * math.pi), 12)).size < 4:
        errors.append("analysis.phases_rad: need at least 4 distinct phases (mod 2 pi)")
    else:
        vals["phases_rad"] = tuple(float(p) for p in phases)
    for key, dest in (("filter_windows_ns", "filter_windows"), ("background_window_ns", "background_window_ns")):
        win = raw[key]
        if win is None:
            vals[dest] = None
            continue
        pairs = [win] if key == "background_window_ns" else win
        ok = isinstance(pairs, list) and pairs and all(
            isinstance(w, list) and len(w) == 2 and all(isinstance(x, (int, float)) for x in w) and w[0] < w[1]
            for w in pairs)
        if not ok:
            errors.append(f"analysis.{key}: expected [start, end] pairs with start < end (got {win!r})")
            continue
        vals[dest] = tuple(map(float, win)) if key == "background_window_ns" else tuple(
            (float(a), float(b)) for a, b in pairs)
    if raw["fit_model"] not in ("auto", "exponential", "oscillatory"):
        errors.append(f"analysis.fit_model: must be auto, exponential or oscillatory (got {raw['fit_model']!r})")
    vals["fit_model"] = raw["fit_model"]
    if len(errors) > n_err:
        return None
    known = {f.name for f in fields(AnalysisOptions)}
    return AnalysisOptions(**{k: v for k, v in vals.items() if k in known})


def validate_config(document: dict, experiment: str | None = None, *, seed: int | None = None,
                    threads: int | None = None) -> ResolvedConfig:
    """Resolve a run document against ``DEFAULTS``.

    ``seed`` overrides ``simulation.seed``. Raises ConfigError listing every
    problem found; otherwise returns the ExperimentSpec and the resolved document.
    """
    errors: list[str] = []
    if not isinstance(document, dict):
        raise ConfigError(["document: must be a JSON object"])
    for key in document:
        if key not in ("experiment", "params", "sequence", "cw", "simulation", "analysis"):
            errors.append(f"{key}: unknown section")
    declared = document.get("experiment")
    if declared is not None and declared not in EXPERIMENTS:
        errors.append(f"experiment: must be one of {', '.join(EXPERIMENTS)} (got {declared!r})")
    elif declared is not None and experiment is not None and declared != experiment:
        errors.append(f"experiment: document is for {declared!r} but {experiment!r} was requested")
    experiment = experiment or declared

    params_given = document.get("params") or {}
    params_raw = _merge("params", {"params": {k: v for k, v in params_given.items() if k != "t2star_ns"}}
                        if isinstance(params_given, dict) else document, errors)
    params = _resolve_params(params_raw, params_given if isinstance(params_given, dict) else {}, errors)
    if isinstance(params_given, dict) and "t2star_ns" in params_given:
        params_raw["t2star_ns"] = params_given["t2star_ns"]

    seq_given = document.get("sequence")
    scheme = Scheme.WEAK
    resolved: dict = {}
    if experiment == "spin-pumping" or "cw" in document:
        if seq_given:
            errors.append("sequence: spin pumping uses the 'cw' section, not 'sequence'")
        cw_raw = _merge("cw", document, errors)
        seq = _resolve_cw(cw_raw, errors)
        resolved["cw"] = cw_raw
    elif isinstance(seq_given, dict) and "pulses" in seq_given:
        seq = _resolve_explicit(seq_given, errors)
        if seq is not None and any(r.target == RESET_HBAR for r in seq.resets):
            scheme = Scheme.DETERMINISTIC
        resolved["sequence"] = seq.to_dict() if seq is not None else seq_given
    else:
        seq_raw = _merge("sequence", document, errors)
        seq, sch, probs = _resolve_sequence(seq_raw, params, errors)
        scheme = sch or scheme
        if probs is not None:
            seq_raw["target_probs"] = list(map(float, probs))
            seq_raw["d"] = len(probs)
        resolved["sequence"] = seq_raw

    sim = _merge("simulation", document, errors)
    if seed is not None:
        sim["seed"] = seed
    n_traj = _number("simulation", "n_traj", sim["n_traj"], errors, lo=1, integer=True)
    n_reps = _number("simulation", "n_reps", sim["n_reps"], errors, lo=1, integer=True)
    dt = _number("simulation", "dt_ns", sim["dt_ns"], errors, lo=0.0, lo_open=True)
    seed_v = _number("simulation", "seed", sim["seed"], errors, lo=0, hi=U64_MAX, integer=True, allow_none=True)
    if not isinstance(sim["delta_pulses"], bool):
        errors.append("simulation.delta_pulses: expected true or false")
    if sim["estimator"] not in ("trajectories", "master"):
        errors.append(f"simulation.estimator: must be 'trajectories' or 'master' (got {sim['estimator']!r})")
    if sim["initial"] not in ("mixed", "hbar"):
        errors.append(f"simulation.initial: must be 'mixed' or 'hbar' (got {sim['initial']!r})")
    if threads is not None and threads < 1:
        errors.append(f"--threads: must be >= 1 (got {threads})")

    analysis_raw = _merge("analysis", document, errors)
    analysis = _resolve_analysis(analysis_raw, errors)

    if experiment in STOCHASTIC and seed_v is None:
        if STOCHASTIC[experiment] or sim["estimator"] == "trajectories":
            errors.append(f"--seed: required for a stochastic {experiment} run")
    if experiment == "hbt" and n_reps is not None and analysis is not None:
        need = max(analysis.far_peaks[1], analysis.side_m_max) + 2
        if n_reps < need:
            errors.append(f"simulation.n_reps: must be >= {need} to reach the far correlation peaks (got {n_reps})")
    if experiment == "interference" and seq is not None and seq.d < 2:
        errors.append("sequence.d: interference needs at least two bins")

    if errors:
        raise ConfigError(errors)
    spec = ExperimentSpec(params, seq, n_traj=n_traj, n_reps=n_reps, dt=dt, seed=seed_v, threads=threads,
                          delta_pulses=sim["delta_pulses"], estimator=sim["estimator"], initial=sim["initial"],
                          analysis=analysis)
    out = {"experiment": experiment, "params": params_raw, **resolved, "simulation": sim,
           "analysis": analysis_raw}
    return ResolvedConfig(spec, out, scheme)


def schema() -> dict:
    """JSON Schema (draft 2020-12) of a run document, generated from ``DEFAULTS``."""

    def kind(value):
        if isinstance(value, bool):
            return {"type": "boolean"}
        if isinstance(value, int):
            return {"type": "number"}
        if isinstance(value, float):
            return {"type": "number"}
        if isinstance(value, str):
            return {"type": "string"}
        if isinstance(value, list):
            return {"type": "array"}
        return {}

    def section(name):
        props = {k: {**kind(v), "default": v} for k, v in DEFAULTS[name].items()}
        return {"type": "object", "additionalProperties": False, "properties": props}

    params = section("params")
    params["properties"]["t2star_ns"] = {"type": "number", "exclusiveMinimum": 0}
    params["properties"]["enhanced_target"] = {"enum": ["h", "hbar", 0, 1], "default": "h"}
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "qdwstate run document",
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "experiment": {"enum": list(EXPERIMENTS)},
            "params": params,
            "sequence": {"oneOf": [section("sequence"), {"type": "object", "required": ["pulses"]}]},
            "cw": section("cw"),
            "simulation": section("simulation"),
            "analysis": section("analysis"),
        },
    }
