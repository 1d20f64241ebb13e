import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qdwstate.fitting import FitError, fit_damped_oscillation, fit_exponential, fit_sinusoid


def test_exponential_recovers_tau():
    t = np.linspace(0, 30, 200)
    fit = fit_exponential(t, 3.0 * np.exp(-t / 6.71))
    assert fit["tau"] == pytest.approx(6.71, rel=1e-9)
    assert fit["A"] == pytest.approx(3.0, rel=1e-9)


def test_exponential_with_noise_and_offset_window():
    rng = np.random.default_rng(0)
    t = np.linspace(2, 20, 400)
    y = np.exp(-t / 0.27) * 1e3 + rng.normal(0, 1e-6, t.size)
    assert fit_exponential(t[t < 5], y[t < 5])["tau"] == pytest.approx(0.27, rel=1e-3)


@pytest.mark.parametrize("y", [np.ones(20), np.linspace(1, 2, 20)])
def test_non_decaying_rejected(y):
    with pytest.raises(FitError):
        fit_exponential(np.arange(20.0), y)


def test_too_few_points():
    with pytest.raises(FitError):
        fit_exponential([0.0, 1.0], [1.0, 0.5])
    with pytest.raises(FitError):
        fit_sinusoid([0, 1, 2], [1, 2, 3])


@pytest.mark.parametrize("v", [0.677, 0.656])
def test_sinusoid_visibility(v):
    phases = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    fit = fit_sinusoid(phases, 2.0 * (1 + v * np.cos(phases + 0.4)))
    assert fit["V"] == pytest.approx(v, abs=1e-12)
    assert fit["phi0"] == pytest.approx(0.4, abs=1e-12)


def test_sinusoid_constant_has_zero_visibility():
    fit = fit_sinusoid(np.linspace(0, 6, 10), np.full(10, 5.0))
    assert fit["V"] == 0 and fit["A"] == pytest.approx(5.0)


def test_sinusoid_rejects_nonpositive_offset():
    phases = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    with pytest.raises(FitError):
        fit_sinusoid(phases, np.cos(phases))


@given(st.floats(0.05, 0.99), st.floats(-3, 3), st.floats(0.1, 10))
def test_sinusoid_property(v, phi0, a):
    phases = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    fit = fit_sinusoid(phases, a * (1 + v * np.cos(phases + phi0)))
    assert fit["V"] == pytest.approx(v, rel=1e-8)
    assert math.cos(fit["phi0"] - phi0) == pytest.approx(1.0, abs=1e-8)


def test_sinusoid_noisy_stderr():
    rng = np.random.default_rng(4)
    phases = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    y = 100 * (1 + 0.7 * np.cos(phases)) + rng.normal(0, 2, phases.size)
    fit = fit_sinusoid(phases, y)
    assert abs(fit["V"] - 0.7) < 4 * fit.stderr["V"]
    assert fit.stderr["V"] > 0


def test_damped_oscillation():
    t = np.linspace(0, 30, 1500)
    y = (0.4 + 0.5 * np.cos(math.pi * t + 0.3) * np.exp(-t / 4.0)) * np.exp(-t / 6.71)
    fit = fit_damped_oscillation(t, y)
    assert fit["omega"] == pytest.approx(math.pi, rel=1e-6)
    assert fit["tau_p"] == pytest.approx(6.71, rel=1e-6)
    assert fit["tau_r"] == pytest.approx(4.0, rel=1e-6)
