import math

import numpy as np
import pytest

from qdwstate.core import HBAR, TBAR, SystemParams, projector
from qdwstate.dynamics.correlations import delayed_coherence, two_time_corr
from qdwstate.dynamics.master import OffGridError, TimeGrid, evolve_master
from qdwstate.experiments import bin_coherences, cw_sequence
from qdwstate.pulses import PulseSequence, ResetPulse, compile_sequence

DT = 0.0025


def test_zero_delay_matches_intensity():
    p = SystemParams(gamma_enh=8, gamma_diag=0.5)
    rho = 0.3 * projector(TBAR) + 0.7 * projector(HBAR)
    seq = PulseSequence(rep_period=20.0)
    g1 = two_time_corr(rho, p, seq, 0.0, [0.0], "G1")
    assert g1[0] == pytest.approx(8 * 0.3)
    g2 = two_time_corr(rho, p, seq, 0.0, [0.0], "G2")
    assert g2[0] == 0


def test_free_decay_g1():
    p = SystemParams(gamma_enh=8, gamma_diag=0.5)
    taus = np.linspace(0, 0.5, 6)
    g1 = two_time_corr(projector(TBAR), p, PulseSequence(rep_period=20.0), 0.0, taus, "G1", dt=0.002)
    # the emitter field amplitude decays at half the total rate
    assert np.allclose(g1, 8 * np.exp(-0.5 * 8.5 * taus), atol=1e-7)


def test_antibunching_and_flat_long_delay():
    # closed driven two-level system: G2 starts at zero and settles at I^2
    p = SystemParams(gamma_enh=4, gamma_diag=0, enhanced_target=HBAR)
    seq = cw_sequence(3.0, 30.0)
    evo = evolve_master(projector(HBAR), seq, p, TimeGrid(0, 20.0, DT))
    rho = evo.final
    intensity = 4 * rho[TBAR, TBAR].real
    g2 = two_time_corr(rho, p, seq, 20.0, [0.0, 0.1, 8.0], "G2", dt=DT)
    assert abs(g2[0]) < 1e-12
    assert 0 < g2[1].real < intensity ** 2
    assert g2[2].real == pytest.approx(intensity ** 2, rel=1e-4)


def test_negative_delay_rejected():
    with pytest.raises(ValueError):
        two_time_corr(projector(TBAR), SystemParams(), PulseSequence(rep_period=5.0), 0.0, [-1.0])


@pytest.mark.parametrize("probs", [(0.2, 0.5, 0.3), (0.6, 0.1, 0.3)])
def test_bin_coherence_tracks_amplitudes(probs):
    p = SystemParams(gamma_enh=20, gamma_diag=0)
    probs = np.array(probs)
    seq = compile_sequence(probs, None, 1.0, 0.01, first_pulse=0.5, rep_period=5.0,
                           reset=ResetPulse(0.0, 1.0, "hbar"))
    coh = bin_coherences(projector(HBAR), seq, p, DT, delta_pulses=True)
    assert np.allclose(coh.intensity, probs, atol=2e-3)
    for j in range(2):
        # coherent emission: |G1| integrates to sqrt(p_j p_{j+1})
        assert abs(coh.g1[j, j + 1]) == pytest.approx(math.sqrt(probs[j] * probs[j + 1]), abs=3e-3)
    assert abs(coh.g1[0, 2]) == pytest.approx(math.sqrt(probs[0] * probs[2]), abs=3e-3)


def test_dephasing_reduces_coherence():
    seq = compile_sequence(np.full(2, 0.5), None, 1.0, 0.01, first_pulse=0.5, rep_period=5.0,
                           reset=ResetPulse(0.0, 1.0, "hbar"))
    clean = bin_coherences(projector(HBAR), seq, SystemParams(gamma_enh=20, gamma_diag=0), DT, delta_pulses=True)
    noisy = bin_coherences(projector(HBAR), seq, SystemParams(gamma_enh=20, gamma_diag=0, gamma_deph=0.5), DT,
                           delta_pulses=True)
    ratio = abs(noisy.g1[0, 1]) / abs(clean.g1[0, 1])
    assert ratio == pytest.approx(math.exp(-0.5 * 1.0), rel=0.02)


def test_delay_must_fit_grid():
    with pytest.raises(OffGridError):
        delayed_coherence(projector(TBAR), PulseSequence(rep_period=5.0), SystemParams(),
                          TimeGrid(0, 5.0, 0.004, align_delay=1.0), 0.333)
    with pytest.raises(ValueError):
        delayed_coherence(projector(HBAR), PulseSequence(rep_period=5.0), SystemParams(),
                          TimeGrid(0, 5.0, 0.01), 0.0)
