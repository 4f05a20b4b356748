import numpy as np
import pytest

from conftest import ohmic_mode, set_leads
from qtherm import greenfn, mastereq, spectral, states
from qtherm.model import TimeGrid


@pytest.fixture(scope="module")
def mode_run():
    system, res = ohmic_mode(0.5, T0=2.0)
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.005, 6.0))
    return gfs, mastereq.coefficients(gfs)


@pytest.fixture(scope="module")
def dot_run():
    system, res = set_leads(0.4)
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.005, 6.0))
    return gfs, mastereq.coefficients(gfs)


def test_coefficients_at_start(mode_run):
    gfs, co = mode_run
    # u(0) = 1 and udot(0) = -i omega_s
    assert co.omega_r[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert co.gamma[0, 0, 0].real == pytest.approx(0.0, abs=1e-12)
    assert co.gamma_tilde[0, 0, 0].real == pytest.approx(0.0, abs=1e-12)
    assert co.defined.all()


def test_coefficients_are_hermitian(dot_run):
    _, co = dot_run
    for a in (co.eps_r, co.gamma, co.gamma_tilde):
        np.testing.assert_allclose(a, np.conj(np.swapaxes(a, 1, 2)), atol=1e-12)


def test_late_coefficients_approach_pole_values():
    # the band-edge branch cut adds a slowly decaying beat on top of the pole
    system, res = ohmic_mode(0.1, T0=2.0)
    gfs = greenfn.solve(system, res, TimeGrid.from_horizon(0.01, 60.0))
    co = mastereq.coefficients(gfs)
    w, g, gt = mastereq.steady_coefficients(res[0].sd, 1.0, 2.0)
    assert co.omega_r[-1, 0] == pytest.approx(w, abs=1e-4)
    assert co.gamma[-1, 0, 0].real == pytest.approx(g, rel=1e-3)
    assert co.gamma_tilde[-1, 0, 0].real == pytest.approx(gt, rel=5e-3)


def test_steady_coefficients_with_bound_state():
    w, g, gt = mastereq.steady_coefficients(spectral.Ohmic(0.12, 10.0), 1.0, 1.0)
    assert w < 0 and g == 0 and np.isnan(gt)


@pytest.mark.parametrize("stats", ["bose", "fermi"])
def test_generator_preserves_trace_and_hermiticity(stats, rng):
    dim = 12 if stats == "bose" else 4
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    if stats == "bose":
        eps, g, gt = 1.3, 0.2, 0.5
        # the truncated ladder loses flux at the top level
        rho[-1, :] = rho[:, -1] = 0
        rho /= np.trace(rho)
    else:
        h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        eps = h + h.conj().T
        b = rng.normal(size=(2, 2))
        g = b @ b.T
        gt = 0.3 * np.eye(2)
    d = mastereq.generator(rho, eps, g, gt, stats)
    assert abs(np.trace(d)) < 1e-12
    np.testing.assert_allclose(d, d.conj().T, atol=1e-12)


def test_population_generator_matches_full_generator(rng):
    p = rng.random(10)
    p[-1] = 0
    p /= p.sum()
    full = mastereq.generator(np.diag(p), 1.0, 0.3, 0.7, "bose")
    np.testing.assert_allclose(mastereq.population_generator(p, 0.3, 0.7), np.real(np.diag(full)), atol=1e-14)


def test_master_equation_reproduces_boson_closed_form(mode_run):
    gfs, co = mode_run
    nbar_max = 3 * abs(gfs.u[0, 0, 0]) ** 2 + np.max(gfs.v.real)
    n_max = states.truncation_size(nbar_max, 3)
    traj = states.closed_form_rho_boson(gfs, states.fock_state(3, n_max), n_max)
    me = mastereq.propagate_master_equation(co, traj.state(0))
    dist = [states.trace_distance(traj.state(k), me.state(i)) for i, k in enumerate(me.indices)]
    assert me.indices[-1] == gfs.grid.n_steps
    assert max(dist) < 1e-5


def test_master_equation_reproduces_dot_state(dot_run):
    gfs, co = dot_run
    empty = np.zeros((4, 4))
    empty[0, 0] = 1
    me = mastereq.propagate_master_equation(co, empty)
    dist = [states.trace_distance(states.set_rho_fermion(gfs.v[k]), me.state(i))
            for i, k in enumerate(me.indices)]
    assert max(dist) < 1e-7


def test_master_equation_error_falls_with_step():
    system, res = ohmic_mode(0.5, T0=0.0)
    errs = []
    for dt in (0.02, 0.01):
        gfs = greenfn.solve(system, res, TimeGrid.from_horizon(dt, 4.0))
        co = mastereq.coefficients(gfs)
        traj = states.closed_form_rho_boson(gfs, np.eye(4)[2], 30)
        me = mastereq.propagate_master_equation(co, traj.populations[0])
        errs.append(max(states.trace_distance(traj.state(k), me.state(i)) for i, k in enumerate(me.indices)))
    assert errs[0] / errs[1] > 8
