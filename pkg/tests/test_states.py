import math

import numpy as np
import pytest

from conftest import ohmic_mode, set_leads
from qtherm import greenfn, states
from qtherm.model import ConfigurationError, SolverError, TimeGrid


@pytest.fixture(scope="module")
def mode_gfs():
    system, res = ohmic_mode(0.5, T0=2.0)
    return greenfn.solve(system, res, TimeGrid.from_horizon(0.01, 5.0))


def test_truncation_size():
    assert states.truncation_size(0.0) == 30
    assert states.truncation_size(0.0, 40) == 40
    n = states.truncation_size(3.0, minimum=1)
    assert (0.75) ** n < 1e-10 <= (0.75) ** (n - 1)
    assert states.truncation_size(3.0, 5, minimum=1) == n + 5


def test_closed_form_at_start_is_initial_state(mode_gfs):
    traj = states.closed_form_rho_boson(mode_gfs, np.eye(6)[4], 50, indices=[0])
    np.testing.assert_allclose(traj.populations[0], np.eye(51)[4], atol=1e-14)


def test_closed_form_is_a_state(mode_gfs):
    r0 = np.zeros((4, 4), dtype=complex)
    r0[1, 1] = r0[3, 3] = 0.5
    r0[1, 3] = r0[3, 1] = 0.5
    traj = states.closed_form_rho_boson(mode_gfs, r0, 60, indices=[0, 100, 300, 500])
    for k in range(4):
        traj.state(k).check()


def test_closed_form_mean_matches_occupation(mode_gfs):
    traj = states.closed_form_rho_boson(mode_gfs, np.eye(4)[3], 60)
    n = mode_gfs.occupation(3.0)[:, 0, 0].real
    np.testing.assert_allclose(traj.mean_number(), n, atol=1e-9)


def test_closed_form_thermal_start_stays_gibbs_like(mode_gfs):
    # a thermal start stays Gaussian with mean n(t)
    p0 = states.steady_state_rho(0.7, "bose", 80).matrix
    traj = states.closed_form_rho_boson(mode_gfs, np.real(np.diag(p0)), 80, indices=[250])
    nb = mode_gfs.occupation(0.7)[250, 0, 0].real
    gibbs = states.steady_state_rho(nb, "bose", 80).matrix
    assert states.trace_distance(traj.state(0), gibbs) < 1e-9


def test_truncation_leak_raises(mode_gfs):
    with pytest.raises(SolverError):
        states.closed_form_rho_boson(mode_gfs, np.eye(6)[5], 6)


def test_propagating_coefficients_at_start(mode_gfs):
    pc = states.propagating_coefficients(mode_gfs)
    np.testing.assert_allclose(pc.J1[0], np.eye(1), atol=1e-14)
    np.testing.assert_allclose(pc.J2[0], 0, atol=1e-14)
    np.testing.assert_allclose(pc.J3[0], 0, atol=1e-14)


def test_set_state_matches_gaussian_construction():
    system, res = set_leads(0.4)
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.01, 3.0))
    for k in (50, 150, 300):
        a = states.set_rho_fermion(gfs.v[k])
        b = states.steady_state_rho(gfs.v[k], "fermi")
        a.check()
        assert states.trace_distance(a, b) < 1e-12


def test_set_state_rejects_bad_correlation():
    with pytest.raises(ConfigurationError):
        states.set_rho_fermion(np.diag([1.2, 0.3]))
    with pytest.raises(ConfigurationError):
        states.set_rho_fermion(np.eye(3) * 0.5)


def test_bose_gibbs_state_is_geometric():
    p = np.real(np.diag(states.steady_state_rho(2.0, "bose", 200).matrix))
    k = np.arange(201)
    np.testing.assert_allclose(p, (2.0 / 3.0) ** k / 3.0, rtol=1e-12)


def test_fermi_pure_limits():
    rho = states.steady_state_rho(np.diag([1.0, 0.0]), "fermi").matrix
    assert rho[1, 1] == pytest.approx(1.0)
    assert math.isclose(np.trace(rho).real, 1.0)


def test_trace_distance_values():
    assert states.trace_distance(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])) == pytest.approx(1.0)
    plus = 0.5 * np.ones((2, 2))
    assert states.trace_distance(plus, np.diag([1.0, 0.0])) == pytest.approx(math.sqrt(0.5))
    assert states.trace_distance(np.array([0.2, 0.8]), np.array([0.5, 0.5])) == pytest.approx(0.3)
