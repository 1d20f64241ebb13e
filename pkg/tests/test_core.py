import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdwstate.core import (CLICK_CHANNELS, H, HBAR, HBAR_UEV_NS, T, TBAR, Channel, LevelBasis, ParameterError,
                           SystemParams, TimeBinState, build_collapse_ops, build_hamiltonian,
                           check_density_matrix, density_matrix, fidelity, lindblad_rhs, mixed_ground,
                           projector, raman_emission_offset, single_bin, ueV_to_rad_per_ns, vacuum, wstate)

rates = st.floats(0, 50, allow_nan=False)


def random_rho(rng, dim=4):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_basis_order():
    assert [LevelBasis.h, LevelBasis.hbar, LevelBasis.T, LevelBasis.Tbar] == [0, 1, 2, 3]
    assert (H, HBAR, T, TBAR) == (0, 1, 2, 3)


def test_hamiltonian_examples():
    assert np.all(build_hamiltonian(SystemParams()) == 0)
    ham = build_hamiltonian(SystemParams(), np.pi)
    nz = np.argwhere(ham != 0)
    assert {tuple(i) for i in nz} == {(TBAR, HBAR), (HBAR, TBAR)}
    assert ham[TBAR, HBAR] == pytest.approx(np.pi / 2)
    ham = build_hamiltonian(SystemParams(delta_drive=ueV_to_rad_per_ns(65.0)))
    assert ham[TBAR, TBAR].real == pytest.approx(98.76, abs=0.01)
    assert ham[TBAR, TBAR].real == pytest.approx(65.0 / 0.658212, abs=1e-12)
    assert HBAR_UEV_NS == 0.658212


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(-100, 100))
def test_hamiltonian_hermitian(re, im, delta):
    ham = build_hamiltonian(SystemParams(delta_drive=delta), complex(re, im))
    assert np.max(np.abs(ham - ham.conj().T)) <= 1e-12


def test_collapse_examples():
    ops = build_collapse_ops(SystemParams(gamma_enh=10, gamma_diag=0))
    assert len(ops) == 1
    assert ops[0].channel is Channel.ENHANCED
    assert abs(ops[0].op[H, TBAR]) ** 2 == pytest.approx(10)
    with pytest.raises(ParameterError):
        SystemParams(gamma_enh=0, gamma_diag=0)
    ops = build_collapse_ops(SystemParams(gamma_enh=25, gamma_diag=1))
    w = {c.channel: np.sum(np.abs(c.op) ** 2) for c in ops}
    assert w[Channel.ENHANCED] / w[Channel.DIAGONAL] == pytest.approx(25)


def test_collapse_all_channels():
    p = SystemParams(gamma_enh=2, gamma_diag=1, gamma_deph=0.4, gamma_sf=0.1)
    ops = build_collapse_ops(p)
    chans = [c.channel for c in ops]
    assert chans.count(Channel.SPINFLIP) == 2
    deph = next(c.op for c in ops if c.channel is Channel.DEPHASE)
    assert np.allclose(np.diag(deph)[:2], np.sqrt(0.2) * np.array([1, -1]))
    diag = next(c.op for c in ops if c.channel is Channel.DIAGONAL)
    assert diag[HBAR, TBAR] == pytest.approx(1.0)
    assert set(CLICK_CHANNELS) == {Channel.ENHANCED, Channel.DIAGONAL}


def test_enhanced_target_is_configurable():
    ops = build_collapse_ops(SystemParams(gamma_enh=4, gamma_diag=1, enhanced_target=HBAR))
    enh = next(c.op for c in ops if c.channel is Channel.ENHANCED)
    assert enh[HBAR, TBAR] == pytest.approx(2.0)


@pytest.mark.parametrize("kwargs", [
    {"gamma_enh": -1}, {"gamma_sf": np.nan}, {"dephasing_mode": "white"},
    {"gamma_deph": 0.1, "sigma_quasistatic": 0.2},
    {"dephasing_mode": "quasistatic", "gamma_deph": 0.1},
])
def test_params_rejected(kwargs):
    with pytest.raises(ParameterError):
        SystemParams(**kwargs)


def test_t2star_property():
    assert SystemParams(gamma_deph=0.5).t2star == pytest.approx(2.0)
    assert SystemParams(dephasing_mode="quasistatic", sigma_quasistatic=np.sqrt(2)).t2star == pytest.approx(1.0)
    assert SystemParams().t2star == np.inf


def test_rate_equation():
    g = 7.0
    rho = projector(TBAR)
    d = lindblad_rhs(rho, np.zeros((4, 4)), [np.sqrt(g) * projector(H, TBAR)])
    assert d[TBAR, TBAR].real == pytest.approx(-g)
    assert d[H, H].real == pytest.approx(g)


@given(st.integers(0, 2 ** 32 - 1), rates, rates, rates, rates, st.floats(-20, 20), st.floats(0, 30))
def test_rhs_trace_free_and_hermitian(seed, ge, gd, gdeph, gsf, delta, omega):
    p = SystemParams(gamma_enh=ge + 0.1, gamma_diag=gd, gamma_deph=gdeph, gamma_sf=gsf, delta_drive=delta)
    rho = random_rho(np.random.default_rng(seed))
    d = lindblad_rhs(rho, build_hamiltonian(p, omega), build_collapse_ops(p))
    scale = max(1.0, np.max(np.abs(d)))
    assert abs(np.trace(d)) <= 1e-12 * scale
    assert np.max(np.abs(d - d.conj().T)) <= 1e-12 * scale


def test_density_helpers():
    assert np.allclose(density_matrix(2), projector(2))
    v = np.array([1, 1j, 0, 0])
    assert check_density_matrix(density_matrix(v)) == []
    assert check_density_matrix(mixed_ground()) == []
    bad = np.diag([1.2, -0.2, 0, 0]).astype(complex)
    assert any("negative" in s for s in check_density_matrix(bad))
    with pytest.raises(ValueError):
        density_matrix(np.ones(3))


def test_wstate_examples():
    w3 = wstate(3)
    assert np.allclose(w3.amps, 1 / np.sqrt(3)) and w3.vac == 0
    assert np.allclose(wstate(1).amps, [1])
    assert np.allclose(wstate(4).amps, 0.5)
    with pytest.raises(ValueError):
        wstate(0)


def test_fidelity_examples():
    w3 = wstate(3)
    assert fidelity(w3, w3) == pytest.approx(1)
    assert fidelity(w3, single_bin(3, 0)) == pytest.approx(1 / 3)
    assert fidelity(w3, vacuum(3)) == pytest.approx(0)
    with pytest.raises(ValueError):
        fidelity(w3, wstate(2))


@st.composite
def states(draw, d=None):
    d = d or draw(st.integers(1, 6))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=d) + 1j * rng.normal(size=d)
    vac = rng.normal() + 1j * rng.normal()
    return TimeBinState.normalized(amps, vac)


@given(states(d=4), states(d=4), st.floats(0, 2 * np.pi))
def test_fidelity_symmetric_and_phase_blind(a, b, phi):
    assert fidelity(a, b) == pytest.approx(fidelity(b, a), abs=1e-12)
    rot = TimeBinState(a.amps * np.exp(1j * phi), a.vac * np.exp(1j * phi))
    assert fidelity(a, rot) == pytest.approx(1, abs=1e-12)
    assert 0 <= fidelity(a, b) <= 1


@given(states())
def test_normalized_states_unit_norm(s):
    assert abs(np.linalg.norm(s.vector()) - 1) < 1e-9


def test_unnormalised_rejected():
    with pytest.raises(ValueError):
        TimeBinState(np.array([1.0, 1.0]))


def test_raman_offset():
    assert raman_emission_offset(0) == 0
    assert raman_emission_offset(32.5) - raman_emission_offset(-32.5) == pytest.approx(65)
    assert raman_emission_offset(-10) == -10
