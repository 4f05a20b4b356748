import numpy as np
from hypothesis import assume, given
from hypothesis import strategies as st

from qtherm import mastereq, spectral, states, thermo
from qtherm.model import Statistics, be_fd

pos = st.floats(0.05, 20.0)
energy = st.floats(-10.0, 10.0)


@given(x=st.floats(1e-3, 50.0), T=pos)
def test_bose_occupation_positive_and_decreasing(x, T):
    n = be_fd(x, T)
    assert n >= 0  # underflows to zero deep in the tail
    assert be_fd(x * 1.1, T) <= n


@given(eps=energy, T=pos, mu=energy)
def test_fermi_occupation_bounds_and_particle_hole(eps, T, mu):
    n = be_fd(eps, T, mu, Statistics.FERMI)
    assert 0 <= n <= 1
    assert abs(n + be_fd(2 * mu - eps, T, mu, Statistics.FERMI) - 1) < 1e-14


@given(e1=st.floats(-5, 5), gap=st.floats(0.1, 5), T=st.floats(0.2, 10), mu=st.floats(-3, 3))
def test_fermi_inversion_round_trip(e1, gap, T, mu):
    eps = np.array([e1, e1 + gap])
    n = be_fd(eps, T, mu, Statistics.FERMI)
    assume(np.all((n > 1e-8) & (n < 1 - 1e-8)))  # 1 - n must carry digits
    Tr, mur = thermo.renorm_T_mu_fermion(eps, n)
    assert abs(Tr - T) < 1e-6 * T
    assert abs(mur - mu) < 1e-6 * max(1, abs(mu))


@given(nb=st.floats(0.0, 5.0))
def test_bose_gibbs_state_identities(nb):
    rho = states.steady_state_rho(nb, "bose", states.truncation_size(nb, tail=1e-14))
    p = np.real(np.diag(rho.matrix))
    assert abs(p.sum() - 1) < 1e-12
    assert abs(p @ np.arange(p.size) - nb) < 1e-10
    S = thermo.population_entropy(p)
    assert abs(S - float(thermo.gaussian_entropy([nb], "bose"))) < 1e-10


@given(w=st.floats(0.1, 5), T=st.floats(0.1, 10))
def test_bose_free_energy_legendre(w, T):
    n = be_fd(w, T)
    F = thermo.free_energy_partition([w], T, 0.0, "bose")
    S = float(thermo.gaussian_entropy([n], "bose"))
    assert abs(F - (w * n - T * S)) < 1e-10 * max(1, abs(F))


@given(g=st.floats(0, 2), gt=st.floats(0, 2), seed=st.integers(0, 2**32 - 1))
def test_population_generator_conserves_probability(g, gt, seed):
    p = np.random.default_rng(seed).random(20)
    p[-1] = 0  # no flux out of the truncation
    p /= p.sum()
    assert abs(mastereq.population_generator(p, g, gt).sum()) < 1e-12


@given(w=st.floats(-3, 3), g=st.floats(0, 2), gt=st.floats(0, 2), seed=st.integers(0, 2**32 - 1))
def test_boson_generator_preserves_trace(w, g, gt, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    rho = a @ a.conj().T
    rho[-1, :] = rho[:, -1] = 0
    rho /= np.trace(rho)
    d = mastereq.generator(rho, w, g, gt, "bose")
    assert abs(np.trace(d)) < 1e-12
    assert np.allclose(d, d.conj().T, atol=1e-12)


def _density(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    r = a @ a.conj().T
    return r / np.trace(r)


@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(2, 6))
def test_trace_distance_is_a_metric(seed, dim):
    rng = np.random.default_rng(seed)
    a, b, c = (_density(rng, dim) for _ in range(3))
    dab = states.trace_distance(a, b)
    assert abs(dab - states.trace_distance(b, a)) < 1e-12
    assert 0 <= dab <= 1 + 1e-12
    assert states.trace_distance(a, a) < 1e-12
    assert dab <= states.trace_distance(a, c) + states.trace_distance(c, b) + 1e-12


@given(n1=st.floats(0, 50), n2=st.floats(0, 50), idx=st.integers(0, 20))
def test_truncation_size_monotone(n1, n2, idx):
    lo, hi = sorted((n1, n2))
    assert states.truncation_size(lo, idx) <= states.truncation_size(hi, idx)
    assert states.truncation_size(hi, idx) >= max(30, idx)


@given(t=st.lists(st.floats(0.0, 20.0), min_size=1, max_size=5), eta=st.floats(0.001, 0.2))
def test_memory_kernel_hermitian_in_time(t, eta):
    t = np.array(t)
    for sd in (spectral.Ohmic(eta, 10.0), spectral.Ohmic(eta, 10.0, 40.0), spectral.Lorentzian(eta, 5.0, 1.0)):
        g = spectral.memory_kernel(sd, t)
        gm = spectral.memory_kernel(sd, -t)
        assert np.allclose(gm, np.conj(g), atol=1e-12)
        assert np.all(np.abs(g) <= sd.mass() * (1 + 1e-12))


@given(nb=st.floats(0.01, 0.99), nd=st.floats(0.01, 0.99), c=st.floats(-1, 1))
def test_set_state_is_valid_density(nb, nd, c):
    off = c * np.sqrt(nb * nd * (1 - nb) * (1 - nd)) * 0.9
    v = np.array([[nb, off], [off, nd]])
    rho = states.set_rho_fermion(v)
    rho.check()
    # the diagonal occupations are reproduced
    up = rho.matrix[1, 1] + rho.matrix[3, 3]
    assert abs(up.real - nb) < 1e-12
