import warnings

import numpy as np
import pytest

from conftest import ohmic_mode, set_leads
from qtherm import greenfn, oracle, spectral
from qtherm.model import ConfigurationError, NoThermalizationError, ReservoirSpec, SystemSpec, TimeGrid


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 9, 20])
@pytest.mark.parametrize("deg", [0, 1, 2, 3])
def test_gregory_weights_integrate_cubics_exactly(n, deg):
    h = 0.3
    w = greenfn.quadrature_weights(n, "gregory")
    t = h * np.arange(w.size)
    exact = (n * h) ** (deg + 1) / (deg + 1)
    assert h * np.dot(w, t**deg) == pytest.approx(exact, rel=1e-12, abs=1e-14)


def test_trapezoid_weights():
    w = greenfn.quadrature_weights(4, "trapezoid")
    np.testing.assert_allclose(w, [0.5, 1, 1, 1, 0.5])


def test_zero_coupling_is_free_evolution():
    system, res = ohmic_mode(0.0, T0=5.0)
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.01, 3.0))
    t = gfs.times
    np.testing.assert_allclose(gfs.u[:, 0, 0], np.exp(-1j * t), atol=1e-12)
    np.testing.assert_allclose(gfs.udot[:, 0, 0], -1j * np.exp(-1j * t), atol=1e-12)
    assert np.max(np.abs(gfs.v)) < 1e-12


def test_initial_values():
    system, res = set_leads(0.4)
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.01, 1.0))
    np.testing.assert_allclose(gfs.u[0], np.eye(2), atol=1e-14)
    np.testing.assert_allclose(gfs.v[0], 0, atol=1e-14)
    # v stays Hermitian and inside [0, 1] for fermions
    assert np.allclose(gfs.v, np.conj(np.swapaxes(gfs.v, 1, 2)), atol=1e-12)
    lam = np.linalg.eigvalsh(gfs.v)
    assert lam.min() > -1e-9 and lam.max() < 1 + 1e-9


def test_time_route_converges_to_frequency_route():
    # the Lorentzian tail makes the noise kernel kink at zero lag, so the
    # time route drops to second order while the frequency route is exact
    system, res = set_leads(0.4)
    diffs = []
    for dt in (0.02, 0.01):
        grid = TimeGrid.from_horizon(dt, 4.0)
        a = greenfn.solve(system, res, grid, method="time")
        b = greenfn.solve(system, res, grid, method="frequency")
        diffs.append(np.max(np.abs(a.v - b.v)))
    assert diffs[1] < 1e-3
    assert diffs[0] / diffs[1] == pytest.approx(4.0, rel=0.15)


def test_frequency_route_needs_algebraic_tail():
    system, res = ohmic_mode(0.5, T0=3.0)
    with pytest.raises(ConfigurationError):
        greenfn.solve(system, res, TimeGrid.from_horizon(0.01, 1.0), method="frequency")


def test_gregory_converges_faster_than_trapezoid():
    system, res = ohmic_mode(0.5)
    fine = greenfn.solve_propagator(system, res, TimeGrid.from_horizon(0.0025, 2.0))
    errs = {}
    for scheme in ("gregory", "trapezoid"):
        g = greenfn.solve_propagator(system, res, TimeGrid.from_horizon(0.01, 2.0), scheme=scheme)
        errs[scheme] = np.max(np.abs(g.u[:, 0, 0] - fine.u[::4, 0, 0]))
    assert errs["gregory"] < 0.05 * errs["trapezoid"]


def test_propagator_against_oracle():
    system, res = ohmic_mode(0.5, T0=0.0, omega_max=50.0)
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.01, 10.0))
    errs = []
    for K in (200, 400):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            dts = oracle.discretize_reservoir(system, res, K)
        errs.append(oracle.compare_dynamics(gfs, dts, t_limit=10.0)["max_du"])
    assert errs[1] < 2e-3
    assert errs[0] / errs[1] > 2.5


def test_late_time_occupation_matches_spectral_steady_state():
    system, res = set_leads(0.8)
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.01, 25.0))
    ss = greenfn.steady_occupation(system, res)
    np.testing.assert_allclose(np.real(np.diagonal(gfs.v[-1])), ss, atol=1e-4)


def test_steady_occupation_refuses_bound_state():
    system, res = ohmic_mode(1.2, T0=1.0)
    with pytest.raises(NoThermalizationError):
        greenfn.steady_occupation(system, res)


def test_weak_coupling_steady_occupation_is_bose_einstein():
    sd = spectral.Ohmic(1e-4, 10.0)
    n = greenfn.steady_occupation_spectral(sd, 1.0, 2.0)
    assert n == pytest.approx(1 / np.expm1(0.5), rel=2e-3)


def test_detect_steady_state():
    t = np.linspace(0, 50, 5001)
    x = 1 + np.exp(-t)
    k = greenfn.detect_steady_state(t, x, window=5.0, rtol=1e-6)
    assert k is not None
    assert 12 < t[k] < 20
    assert greenfn.detect_steady_state(t, np.sin(t), window=5.0) is None


def test_occupation_includes_initial_state():
    system = SystemSpec("bose", [1.0])
    res = [ReservoirSpec(spectral.Ohmic(0.01, 10.0), "bose", 2.0)]
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.01, 2.0))
    n = gfs.occupation(3.0)[:, 0, 0].real
    expected = 3.0 * np.abs(gfs.u[:, 0, 0]) ** 2 + gfs.v[:, 0, 0].real
    np.testing.assert_allclose(n, expected, rtol=1e-14)
    assert n[0] == pytest.approx(3.0)
