"""Simulation and analysis of time-bin W-state generation from a charged quantum dot."""

__version__ = "0.1.0"

from .core import (CLICK_CHANNELS, H, HBAR, T, TBAR, Channel, SystemParams, TimeBinState, fidelity,
                   mixed_ground, projector, wstate)
from .dynamics.correlations import delayed_coherence, two_time_corr
from .dynamics.master import TimeGrid, evolve_master, periodic_steady_state
from .dynamics.trajectories import ClickSet, sample_trajectories
from .pulses import Pulse, PulseSequence, ResetPulse, compile_sequence, pulse_areas, round_trip

__all__ = [
    "CLICK_CHANNELS", "Channel", "ClickSet", "H", "HBAR", "Pulse", "PulseSequence", "ResetPulse",
    "SystemParams", "T", "TBAR", "TimeBinState", "TimeGrid", "__version__", "compile_sequence",
    "delayed_coherence", "evolve_master", "fidelity", "mixed_ground", "periodic_steady_state",
    "projector", "pulse_areas", "round_trip", "sample_trajectories", "two_time_corr", "wstate",
]
