import math

import numpy as np
import pytest

from conftest import ETA_C, OMEGA_C
from qtherm import spectral
from qtherm.model import ConfigurationError, ReservoirSpec


def test_ohmic_values_and_support():
    sd = spectral.Ohmic(0.05, OMEGA_C)
    w = np.array([-1.0, 0.0, 1.0, 10.0])
    expected = np.where(w > 0, 0.05 * w * np.exp(-w / OMEGA_C), 0.0)
    np.testing.assert_allclose(sd(w), expected, rtol=1e-15)
    assert sd.support == (0.0, math.inf)
    assert sd.mass() == pytest.approx(0.05 * OMEGA_C**2, rel=1e-12)


def test_lorentzian_mass_is_pi_gamma_d():
    sd = spectral.Lorentzian(0.3, 10.0, 1.5)
    assert sd(1.5) == pytest.approx(0.3)
    assert sd.mass() == pytest.approx(math.pi * 0.3 * 10.0, rel=1e-12)


def test_ohmic_kernel_closed_form_against_quadrature():
    sd = spectral.Ohmic(0.05, OMEGA_C)
    t = np.array([0.0, 0.05, 0.3, 1.0, 4.0])
    exact = 0.05 * OMEGA_C**2 / (1.0 + 1j * OMEGA_C * t) ** 2
    np.testing.assert_allclose(spectral.memory_kernel(sd, t), exact, rtol=1e-12)
    quad = spectral.fourier_integral(sd, 0.0, 60 * OMEGA_C, t, sd.features)
    np.testing.assert_allclose(quad, exact, atol=1e-9)


def test_lorentzian_kernel_closed_form():
    g, d, c = 0.4, 10.0, 0.5
    sd = spectral.Lorentzian(g, d, c)
    t = np.array([0.0, 0.1, 1.0])
    exact = math.pi * g * d * np.exp(-1j * c * t - d * t)
    np.testing.assert_allclose(spectral.memory_kernel(sd, t), exact, rtol=1e-12)


def test_tabulated_kernel_matches_ohmic(tmp_path):
    sd = spectral.Ohmic(0.05, OMEGA_C, omega_max=80.0)
    w = np.linspace(0.0, 80.0, 8001)
    path = tmp_path / "j.csv"
    np.savetxt(path, np.column_stack([w, sd(w)]), delimiter=",", header="omega,J")
    tab = spectral.load_tabulated(path)
    t = np.array([0.0, 0.5, 2.0])
    np.testing.assert_allclose(spectral.memory_kernel(tab, t), spectral.memory_kernel(sd, t), atol=1e-4)


def test_noise_kernel_zero_temperature_boson_vanishes():
    res = ReservoirSpec(spectral.Ohmic(0.05, OMEGA_C), "bose", 0.0)
    assert np.all(spectral.noise_kernel(res, np.linspace(0, 3, 7)) == 0)


def test_noise_kernel_is_hermitian_in_time():
    res = ReservoirSpec(spectral.Lorentzian(0.1, 10.0), "fermi", 3.0, 5.0)
    t = np.array([0.3, 1.1])
    np.testing.assert_allclose(spectral.noise_kernel(res, -t), np.conj(spectral.noise_kernel(res, t)), atol=1e-12)


@pytest.mark.parametrize("omega", [-3.0, 0.5, 1.0, 7.0, 40.0])
def test_closed_shift_agrees_with_principal_value_quadrature(omega):
    for sd in (spectral.Ohmic(0.05, OMEGA_C), spectral.Lorentzian(0.2, 10.0, 1.0)):
        closed, _ = spectral.self_energy(sd, omega)
        assert spectral.shift_quadrature(sd, omega) == pytest.approx(closed, abs=1e-8)


def test_shift_below_support_is_ordinary_integral():
    sd = spectral.Ohmic(0.05, OMEGA_C)
    # Delta(0) = -int J / w = -eta omega_c
    assert spectral.self_energy(sd, 0.0)[0] == pytest.approx(-0.05 * OMEGA_C, rel=1e-12)


def test_bound_state_appears_above_critical_coupling():
    assert spectral.find_bound_states(spectral.Ohmic(0.8 * ETA_C, OMEGA_C), 1.0) == []
    bs = spectral.find_bound_state(spectral.Ohmic(1.2 * ETA_C, OMEGA_C), 1.0)
    assert bs is not None and bs.omega_b < 0
    assert 0 < bs.Z < 1
    assert bs.residual < 1e-10


def test_sum_rule_with_bound_state():
    sd = spectral.Ohmic(1.2 * ETA_C, OMEGA_C)
    bs = spectral.find_bound_state(sd, 1.0)
    assert spectral.continuum_weight(sd, 1.0) + bs.Z == pytest.approx(1.0, abs=1e-6)


def test_resonance_pole_near_bare_level_at_weak_coupling():
    sd = spectral.Ohmic(0.01 * ETA_C, OMEGA_C)
    z = spectral.resonance_pole(sd, 1.0)
    assert abs(z.real - 1.0) < 0.02
    # golden-rule width
    assert -z.imag == pytest.approx(np.pi * sd(z.real), rel=0.02)


def test_bosonic_chemical_potential_inside_support_rejected():
    with pytest.raises(ConfigurationError):
        ReservoirSpec(spectral.Ohmic(0.05, OMEGA_C), "bose", 1.0, mu0=0.5)


def test_invalid_parameters_rejected():
    with pytest.raises(ConfigurationError):
        spectral.Ohmic(-0.1, OMEGA_C)
    with pytest.raises(ConfigurationError):
        spectral.Tabulated([0.0, 1.0, 0.5], [0.0, 1.0, 2.0])


@pytest.mark.parametrize("omega_max", [None, 50.0])
def test_continued_self_energy_meets_real_axis(omega_max):
    sd = spectral.Ohmic(0.05, OMEGA_C, omega_max)
    for x in (0.5, 1.0, 7.0, 30.0):
        shift, _ = spectral.self_energy(sd, x)
        above = sd.continued_self_energy(x + 1e-10j)
        below = sd.continued_self_energy(x - 1e-10j)
        assert above.real == pytest.approx(shift, abs=1e-8)
        assert above.imag == pytest.approx(-np.pi * sd(x), abs=1e-8)
        # the second sheet joins continuously from below
        assert below == pytest.approx(above, abs=1e-8)
