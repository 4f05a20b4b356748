import math

import numpy as np
import pytest

from conftest import ohmic_mode, set_leads
from qtherm import greenfn, mastereq, spectral, states, thermo
from qtherm.model import ConfigurationError, NoThermalizationError, Statistics, TimeGrid, be_fd


def _rel(res, mask):
    r = np.abs(res["rate"]) / res["scale"]
    return float(np.nanmax(r[mask]))


@pytest.fixture(scope="module")
def boson_run():
    system, res = ohmic_mode(0.5, T0=2.0)
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.0025, 6.0))
    co = mastereq.coefficients(gfs)
    nt = gfs.occupation([[2.0]])[:, 0, 0].real
    n_max = states.truncation_size(nt.max(), 2, tail=1e-14)
    traj = states.closed_form_rho_boson(gfs, np.eye(3)[2], n_max)
    return thermo.boson_thermodynamics(gfs, co, traj, 2.0), traj


@pytest.fixture(scope="module")
def fermion_run():
    system, res = set_leads(0.4)
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.002, 6.0))
    return thermo.fermion_thermodynamics(gfs, mastereq.coefficients(gfs)), gfs


def test_gaussian_entropy_matches_von_neumann():
    rho = states.steady_state_rho(1.5, "bose", 400)
    assert thermo.von_neumann_entropy(rho) == pytest.approx(float(thermo.gaussian_entropy([1.5], "bose")), rel=1e-12)
    n = np.array([[0.6, 0.1 + 0.05j], [0.1 - 0.05j, 0.3]])
    rho = states.steady_state_rho(n, "fermi")
    assert thermo.von_neumann_entropy(rho) == pytest.approx(float(thermo.gaussian_entropy(n, "fermi")), rel=1e-12)


def test_pure_states_have_zero_entropy():
    assert thermo.population_entropy(np.eye(5)[3]) == 0
    assert float(thermo.gaussian_entropy([0.0, 1.0], "fermi")) == 0


def test_fermi_inversion_round_trip():
    eps = np.array([1.3, 2.7])
    n = be_fd(eps, 0.8, 1.9, Statistics.FERMI)
    T, mu = thermo.renorm_T_mu_fermion(eps, n)
    assert T == pytest.approx(0.8, rel=1e-12)
    assert mu == pytest.approx(1.9, rel=1e-12)


def test_fermi_inversion_edge_cases():
    with pytest.raises(ConfigurationError):
        thermo.renorm_T_mu_fermion([1.0, 1.0], [0.3, 0.4])
    T, mu = thermo.renorm_T_mu_fermion([1.0, 2.0], [0.4, 0.4])
    assert np.isinf(T) and np.isnan(mu)
    T, _ = thermo.renorm_T_mu_fermion([1.0, 2.0], [0.0, 0.4])
    assert np.isnan(T)


def test_bose_temperature_inverts_occupation():
    n = 1 / np.expm1(1.7 / 0.9)
    assert float(thermo.steady_temperature_boson(1.7, n)) == pytest.approx(0.9, rel=1e-12)


@pytest.mark.parametrize("stats", ["bose", "fermi"])
def test_partition_free_energy_is_legendre_transform(stats):
    eps = np.array([1.2]) if stats == "bose" else np.array([1.2, 2.5])
    T, mu = 0.7, (0.0 if stats == "bose" else 1.6)
    n = be_fd(eps, T, mu, stats)
    U = float(np.sum(eps * n))
    S = float(thermo.gaussian_entropy(n, stats))
    F = thermo.free_energy_partition(eps, T, mu, stats)
    assert F == pytest.approx(U - T * S, abs=1e-13)


def test_specific_heat_partition_matches_finite_difference():
    w = 1.3
    T = np.array([0.05, 0.3, 1.0, 5.0])
    h = 1e-5 * T

    def U(x):
        return w / np.expm1(w / x)

    fd = (U(T + h) - U(T - h)) / (2 * h)
    np.testing.assert_allclose(thermo.specific_heat_partition(w, T), fd, rtol=1e-8)


def test_time_derivative_exact_for_sextics():
    t = np.linspace(0, 1, 41)
    x = 1 + t - 2 * t**3 + 0.5 * t**6
    np.testing.assert_allclose(thermo.time_derivative(x, t[1]), 1 - 6 * t**2 + 3 * t**5, atol=1e-10)


def test_renorm_temperature_guard():
    T = thermo.renorm_temperature_rate([1.0, 1.0], [0.5, 1e-12])
    assert T[0] == 2.0 and np.isnan(T[1])


def test_boson_first_law_and_legendre(boson_run):
    th, _ = boson_run
    d = th.defined
    assert d.mean() > 0.9
    assert _rel(th.first_law_residual(1e-6), d) < 1e-6
    assert _rel(th.legendre_residual(1e-6), d) < 1e-5
    fl = th.first_law_residual()
    assert np.max(np.abs(fl["cumulative"])) < 1e-12


def test_boson_heat_decomposition(boson_run):
    th, _ = boson_run
    dec = th.extra["dQ_dt_decomposition"] - th.extra["Tr_Hr_rho_dot"]
    m = np.isfinite(dec)
    assert np.max(np.abs(dec[m])) < 1e-10


def test_boson_thermo_uses_the_state(boson_run):
    th, traj = boson_run
    np.testing.assert_allclose(th.nbar, traj.mean_number(), atol=1e-10)
    S = thermo.population_entropy(traj.populations)
    np.testing.assert_allclose(th.S, S, atol=1e-10)
    assert th.S[0] == 0


def test_fermion_first_law_and_legendre(fermion_run):
    th, _ = fermion_run
    d = th.defined
    assert d.mean() > 0.9
    assert _rel(th.first_law_residual(1e-6), d) < 1e-6
    assert _rel(th.legendre_residual(1e-6), d) < 1e-5


def test_fermion_gibbs_identity(fermion_run):
    th, _ = fermion_run
    d = th.defined
    ndot = th.extra["ndot"].sum(axis=1)
    lhs = th.T_r * th.dS_dt
    rhs = th.dQ_dt - th.mu_r * ndot
    np.testing.assert_allclose(lhs[d], rhs[d], atol=1e-9 * np.max(np.abs(th.dQ_dt[d])))


def test_steady_state_boson_weak_coupling_is_near_bare():
    ss = thermo.steady_state_boson(spectral.Ohmic(1e-4, 10.0), 1.0, 2.0)
    assert ss.thermalizes
    assert ss.T_r == pytest.approx(2.0, rel=2e-3)
    assert ss.F == pytest.approx(thermo.free_energy_partition(ss.eps_r, ss.T_r, 0.0, "bose"), rel=1e-10)


def test_steady_state_boson_with_bound_state():
    ss = thermo.steady_state_boson(spectral.Ohmic(0.12, 10.0), 1.0, 2.0)
    assert not ss.thermalizes
    assert ss.eps_r[0] < 0 and math.isnan(ss.T_r)
    with pytest.raises(NoThermalizationError):
        thermo.specific_heat_derivative(spectral.Ohmic(0.12, 10.0), 1.0, [1.0])


def test_steady_state_fermion_free_energy():
    system, res = set_leads(0.8)
    ss = thermo.steady_state_fermion(system, res)
    assert ss.thermalizes
    F = thermo.free_energy_partition(ss.eps_r, ss.T_r, ss.mu_r, "fermi")
    assert ss.F == pytest.approx(F, abs=1e-10)
    np.testing.assert_allclose(be_fd(ss.eps_r, ss.T_r, ss.mu_r, "fermi"), ss.nbar, atol=1e-12)


def test_specific_heat_routes_agree():
    sw = thermo.specific_heat_sweep(spectral.Ohmic(0.05, 10.0), 1.0, T_r_min=0.2, T_r_max=5.0, per_decade=5)
    rel = np.abs(sw.C_derivative - sw.C_partition) / sw.C_partition
    assert rel.max() < 1e-3
    assert sw.T_r[0] == pytest.approx(0.2, rel=1e-8)
    assert sw.T_r[-1] == pytest.approx(5.0, rel=1e-8)
