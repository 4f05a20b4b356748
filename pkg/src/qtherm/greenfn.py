"""Nonequilibrium Green functions: the propagator ``u(t)`` from the Dyson
(Volterra integro-differential) equation and the correlation ``v(t, t)``.

The propagator obeys

    du/dt + i eps u + int_0^t g(t - s) u(s) ds = 0,    u(0) = I,

which is integrated once into a Volterra equation of the second kind,

    u(t) = I - int_0^t [i eps + G(t - s)] u(s) ds,     G(t) = int_0^t g,

and discretized by product quadrature on a uniform grid. The default scheme
uses fourth-order Gregory end corrections with a three-point starting block;
``scheme="trapezoid"`` gives the plain second-order rule.

The correlation is

    v(t) = int_0^t int_0^t u(s1) gt(s2 - s1) u(s2)^dagger ds1 ds2,

evaluated with the same weights on the square and updated incrementally, so
the whole series costs O(n^2). Densities with ``1/omega^2`` tails (Lorentzian
leads) give a noise kernel with a cusp at zero lag, which would spoil that
quadrature; for them ``v`` is evaluated in the frequency domain instead,

    v(t) = int d eps J(eps) f(eps) |w_eps(t)|^2,
    w_eps(t) = int_0^t u(s) exp(-i eps (t - s)) ds,

with ``w_eps`` advanced by exact-weight (Filon) cubic steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.signal import fftconvolve

from . import spectral
from .model import (
    ConfigurationError,
    NoThermalizationError,
    ReservoirSpec,
    SolverError,
    Statistics,
    SystemSpec,
    TimeGrid,
    be_fd,
    check_statistics,
)

__all__ = [
    "TimeGrid",
    "SystemSpec",
    "ReservoirSpec",
    "GreenFunctionSet",
    "KernelLattice",
    "kernel_lattice",
    "solve_propagator",
    "compute_correlation",
    "solve",
    "steady_occupation_spectral",
    "steady_occupation",
    "detect_steady_state",
]

NORM_TOL = 1e-3

# Gregory corrections to the trapezoid-free unit weights, left and right ends
_GREGORY_CORR = np.array([-5.0 / 8.0, 1.0 / 6.0, -1.0 / 24.0])
# weights of the starting block: cubic interpolation through nodes 0..3
_START = {
    1: np.array([3.0 / 8.0, 19.0 / 24.0, -5.0 / 24.0, 1.0 / 24.0]),
    2: np.array([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0, 0.0]),
    3: np.array([3.0 / 8.0, 9.0 / 8.0, 9.0 / 8.0, 3.0 / 8.0]),
}
SCHEMES = ("gregory", "trapezoid")


def quadrature_weights(n: int, scheme: str = "gregory") -> np.ndarray:
    """Weights ``w_j`` with ``int_0^{nh} f ~ h sum_j w_j f_j``.

    For the Gregory scheme with ``n < 4`` the weights extend past ``n`` (to
    node 3) because they integrate the cubic through the first four nodes.
    """
    if n == 0:
        return np.zeros(1)
    if scheme == "trapezoid":
        w = np.ones(n + 1)
        w[0] = w[-1] = 0.5
        return w
    if n < 4:
        return _START[n].copy()
    w = np.ones(n + 1)
    w[:3] += _GREGORY_CORR
    w[n - 2 :][::-1] += _GREGORY_CORR
    return w


# change of the weight vector from step n-1 to n on indices n-4..n (n >= 8)
_TAIL_DELTA = {
    "gregory": np.array([0.0, 1.0 / 24.0, -5.0 / 24.0, 19.0 / 24.0, 3.0 / 8.0]),
    "trapezoid": np.array([0.0, 0.0, 0.0, 0.5, 0.5]),
}
_DIRECT_STEPS = 8


@dataclass(frozen=True)
class KernelLattice:
    """Kernels sampled at ``t_k = k dt`` for ``k = 0..n``.

    Arrays have shape ``(n+1, N, N)``; negative lags follow from
    ``K(-t) = K(t)^dagger`` (``g``, ``gt``) and ``G(-t) = -G(t)^dagger``.
    """

    g: np.ndarray
    G: np.ndarray
    gt: np.ndarray


def _freeze(a: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if a is not None:
        a.flags.writeable = False
    return a


def kernel_lattice(system: SystemSpec, reservoirs: Sequence[ReservoirSpec], grid: TimeGrid,
                   noise: bool = True) -> KernelLattice:
    """Sum the reservoir kernels, weighted by their coupling matrices."""
    n, N = grid.n_steps, system.dimension
    t = grid.dt * np.arange(n + 1)
    g = np.zeros((n + 1, N, N), dtype=complex)
    G = np.zeros_like(g)
    gt = np.zeros_like(g)
    for r in reservoirs:
        c = r.coupling_matrix(N)
        g += spectral.memory_kernel(r.sd, t)[:, None, None] * c
        G += spectral.integrated_kernel(r.sd, t)[:, None, None] * c
        if noise:
            gt += spectral.noise_kernel(r, t)[:, None, None] * c
    return KernelLattice(_freeze(g), _freeze(G), _freeze(gt))


@dataclass(frozen=True)
class GreenFunctionSet:
    """Propagator and correlation series on a time grid.

    Attributes
    ----------
    grid : TimeGrid
    u, udot : ndarray, shape (n+1, N, N)
        ``u(t_k)`` and its time derivative from the Dyson right-hand side.
    v, vdot : ndarray or None, shape (n+1, N, N)
        Equal-time correlation ``v(t_k, t_k)`` and its exact derivative.
    statistics : Statistics
    epsilon : ndarray
        Bare single-particle matrix.
    scheme : str
        Quadrature scheme used.
    """

    grid: TimeGrid
    u: np.ndarray
    udot: np.ndarray
    statistics: Statistics
    epsilon: np.ndarray
    v: Optional[np.ndarray] = None
    vdot: Optional[np.ndarray] = None
    scheme: str = "gregory"

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def dimension(self) -> int:
        return self.u.shape[1]

    def occupation(self, n0) -> np.ndarray:
        """``n(t) = u n0 u^dagger + v``."""
        if self.v is None:
            raise ValueError("correlation not computed")
        n0 = np.atleast_2d(np.asarray(n0, dtype=complex))
        return self.u @ n0 @ np.conj(np.swapaxes(self.u, 1, 2)) + self.v

    def occupation_rate(self, n0) -> np.ndarray:
        n0 = np.atleast_2d(np.asarray(n0, dtype=complex))
        ud = np.conj(np.swapaxes(self.u, 1, 2))
        a = self.udot @ n0 @ ud
        return a + np.conj(np.swapaxes(a, 1, 2)) + self.vdot


# ---------------------------------------------------------------------------
# propagator


def _volterra_scalar(eps: complex, G: np.ndarray, h: float, scheme: str) -> np.ndarray:
    """Solve ``u(t) = 1 - int_0^t k(t-s) u(s) ds`` with ``k = i eps + G``."""
    n = G.size - 1
    k = 1j * eps + G
    u = np.empty(n + 1, dtype=complex)
    u[0] = 1.0

    def kk(m):
        return k[m] if m >= 0 else 1j * eps - np.conj(G[-m])

    start = 1
    if scheme == "gregory":
        # starting block u_1..u_3 solved jointly (cubic through nodes 0..3)
        A = np.eye(3, dtype=complex)
        b = np.zeros(3, dtype=complex)
        for r, nn in enumerate(range(1, 4)):
            w = _START[nn]
            b[r] = 1.0 - h * w[0] * kk(nn)
            for j in range(1, 4):
                A[r, j - 1] += h * w[j] * kk(nn - j)
        u[1:4] = np.linalg.solve(A, b)
        start = 4
    corr = _GREGORY_CORR if scheme == "gregory" else np.array([-0.5])
    wn = 3.0 / 8.0 if scheme == "gregory" else 0.5
    piv = 1.0 + h * wn * k[0]
    ncorr = corr.size
    for j in range(start, n + 1):
        # unit-weight sum over s = 0..j-1, then end corrections
        s = np.dot(k[j:0:-1], u[:j])
        for i in range(ncorr):
            s += corr[i] * k[j - i] * u[i]
        for i in range(1, ncorr):
            s += corr[i] * k[i] * u[j - i]
        u[j] = (1.0 - h * s) / piv
        if abs(u[j]) > 1.0 + NORM_TOL:
            raise SolverError(
                f"propagator norm {abs(u[j]):.6f} exceeds 1 at t={j * h:.4g}; reduce dt below {h / 2:.3g}"
            )
    return u


def _volterra_matrix(eps: np.ndarray, G: np.ndarray, h: float, scheme: str) -> np.ndarray:
    """Matrix version of :func:`_volterra_scalar`."""
    n, N = G.shape[0] - 1, G.shape[1]
    I = np.eye(N, dtype=complex)
    k = 1j * eps[None] + G
    u = np.empty_like(G)
    u[0] = I

    def kk(m):
        return k[m] if m >= 0 else 1j * eps - G[-m].conj().T

    start = 1
    if scheme == "gregory":
        A = np.zeros((3 * N, 3 * N), dtype=complex)
        b = np.zeros((3 * N, N), dtype=complex)
        for r, nn in enumerate(range(1, 4)):
            w = _START[nn]
            b[r * N : (r + 1) * N] = I - h * w[0] * kk(nn)
            for j in range(1, 4):
                A[r * N : (r + 1) * N, (j - 1) * N : j * N] += h * w[j] * kk(nn - j)
            A[r * N : (r + 1) * N, r * N : (r + 1) * N] += I
        sol = np.linalg.solve(A, b)
        for r in range(3):
            u[r + 1] = sol[r * N : (r + 1) * N]
        start = 4
    corr = _GREGORY_CORR if scheme == "gregory" else np.array([-0.5])
    wn = 3.0 / 8.0 if scheme == "gregory" else 0.5
    piv = np.linalg.inv(I + h * wn * k[0])
    ncorr = corr.size
    for j in range(start, n + 1):
        s = np.einsum("kab,kbc->ac", k[j:0:-1], u[:j])
        for i in range(ncorr):
            s += corr[i] * k[j - i] @ u[i]
        for i in range(1, ncorr):
            s += corr[i] * k[i] @ u[j - i]
        u[j] = piv @ (I - h * s)
        smax = np.linalg.norm(u[j], 2)
        if smax > 1.0 + NORM_TOL:
            raise SolverError(
                f"propagator singular value {smax:.6f} exceeds 1 at t={j * h:.4g}; reduce dt below {h / 2:.3g}"
            )
    return u


def _weighted_history(K: np.ndarray, Kneg, u: np.ndarray, h: float, scheme: str) -> np.ndarray:
    """``h sum_j w^(n)_j K_{n-j} u_j`` for every ``n`` (scalar series).

    The unit-weight part is one FFT convolution; end corrections are O(1)
    per step. `Kneg(m)` returns the kernel at negative lag ``-m``.
    """
    n = u.size - 1
    full = fftconvolve(K, u)[: n + 1]
    out = np.zeros(n + 1, dtype=complex)
    if n == 0:
        return out
    idx = np.arange(n + 1)
    if scheme == "trapezoid":
        out[1:] = full[1:] - 0.5 * K[idx[1:]] * u[0] - 0.5 * K[0] * u[1:]
        return h * out
    for m in range(1, min(n, 7) + 1):
        w = quadrature_weights(m, scheme)
        acc = 0.0
        for j, wj in enumerate(w):
            kv = K[m - j] if m - j >= 0 else Kneg(j - m)
            if j > n:
                raise SolverError("grid too short for the starting block")
            acc += wj * kv * u[j]
        out[m] = acc
    if n >= 8:
        m = idx[8:]
        acc = full[8:].copy()
        for i, c in enumerate(_GREGORY_CORR):
            acc += c * K[m - i] * u[i]
            acc += c * K[i] * u[m - i]
        out[8:] = acc
    return h * out


def _udot_scalar(eps, g, u, h, scheme):
    return -1j * eps * u - _weighted_history(g, lambda m: np.conj(g[m]), u, h, scheme)


def _udot_matrix(eps, g, u, h, scheme):
    n, N = u.shape[0] - 1, u.shape[1]
    hist = np.zeros_like(u)
    for a in range(N):
        for b in range(N):
            for c in range(N):
                K = g[:, a, b]
                Kc = g[:, b, a]
                hist[:, a, c] += _weighted_history(K, lambda m, Kc=Kc: np.conj(Kc[m]), u[:, b, c], h, scheme)
    return -1j * (eps[None] @ u) - hist


def _is_diagonal(m: np.ndarray) -> bool:
    return bool(np.allclose(m, np.diag(np.diag(m)), atol=0.0, rtol=0.0))


def _diagonal_structure(system: SystemSpec, reservoirs) -> bool:
    if not _is_diagonal(system.epsilon):
        return False
    N = system.dimension
    return all(_is_diagonal(r.coupling_matrix(N)) for r in reservoirs)


def solve_propagator(system: SystemSpec, reservoirs: Sequence[ReservoirSpec], grid: TimeGrid,
                     scheme: str = "gregory", lattice: Optional[KernelLattice] = None) -> GreenFunctionSet:
    """Propagator ``u(t, t0)`` on `grid`.

    Parameters
    ----------
    system : SystemSpec
    reservoirs : sequence of ReservoirSpec
        The memory kernel is the coupling-weighted sum over reservoirs.
    grid : TimeGrid
    scheme : {"gregory", "trapezoid"}
        Fourth- or second-order product quadrature.
    lattice : KernelLattice, optional
        Precomputed kernels (e.g. shared between runs).

    Returns
    -------
    GreenFunctionSet
        With ``u`` and ``udot`` filled.

    Raises
    ------
    SolverError
        If ``|u|`` grows beyond ``1 + 1e-3``, a sign of too large a step.
    """
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    check_statistics(system, reservoirs)
    if scheme == "gregory" and grid.n_steps < _DIRECT_STEPS:
        scheme = "trapezoid"  # too few points for the end corrections
    if lattice is None:
        lattice = kernel_lattice(system, reservoirs, grid, noise=False)
    h = grid.dt
    eps = system.epsilon
    N = system.dimension
    if not np.any(lattice.G) and not np.any(lattice.g):
        # decoupled: the free propagator is exact
        lam, vec = np.linalg.eigh(eps)
        ph = np.exp(-1j * grid.times[:, None] * lam[None])
        u = np.einsum("ak,tk,bk->tab", vec, ph, vec.conj())
        ud = -1j * (eps[None] @ u)
    elif _diagonal_structure(system, reservoirs):
        u = np.zeros((grid.n_steps + 1, N, N), dtype=complex)
        ud = np.zeros_like(u)
        for i in range(N):
            e = complex(eps[i, i])
            ui = _volterra_scalar(e, lattice.G[:, i, i], h, scheme)
            u[:, i, i] = ui
            ud[:, i, i] = _udot_scalar(e, lattice.g[:, i, i], ui, h, scheme)
    else:
        u = _volterra_matrix(eps, lattice.G, h, scheme)
        ud = _udot_matrix(eps, lattice.g, u, h, scheme)
    return GreenFunctionSet(
        grid=grid,
        u=_freeze(u),
        udot=_freeze(ud),
        statistics=system.statistics,
        epsilon=eps,
        scheme=scheme,
    )


# ---------------------------------------------------------------------------
# correlation


def _correlation_scalar(u: np.ndarray, gt: np.ndarray, h: float, scheme: str):
    """``v_n`` and ``vdot_n`` for a scalar propagator and noise kernel."""
    n = u.size - 1
    off = n + 4
    Gf = np.empty(2 * off + 1, dtype=complex)
    Gf[off:] = np.concatenate([gt, np.zeros(off - n)])
    Gf[:off] = np.conj(Gf[2 * off : off : -1])
    v = np.zeros(n + 1)
    vd = np.zeros(n + 1)
    if not np.any(gt):
        return v, vd

    def G(m):
        return Gf[off + m]

    def c_at(a, lo_idx, j):
        # sum_i a_i G_{j-i}, a supported on lo_idx..lo_idx+len(a)-1
        i = lo_idx + np.arange(a.size)
        return np.dot(a, Gf[off + j - i])

    # direct evaluation for the first steps
    a = np.zeros(0, dtype=complex)
    for m in range(1, min(n, _DIRECT_STEPS) + 1):
        w = quadrature_weights(m, scheme)
        a = w * u[: w.size]
        i = np.arange(a.size)
        Gm = Gf[off + i[None, :] - i[:, None]]  # G_{j-i}
        v[m] = h * h * np.real(a @ Gm @ np.conj(a))
        q = h * np.dot(a, Gf[off + m - i])
        vd[m] = 2.0 * np.real(u[m] * np.conj(q))
    if n <= _DIRECT_STEPS:
        return v, vd
    # incremental update: a holds w^(m) * u on indices 0..m
    a = (quadrature_weights(_DIRECT_STEPS, scheme) * u[: _DIRECT_STEPS + 1]).astype(complex)
    acc = v[_DIRECT_STEPS] / (h * h)
    buf = np.zeros(n + 1, dtype=complex)
    buf[: a.size] = a
    dw = _TAIL_DELTA[scheme]
    Gr = Gf[::-1].copy()  # Gr[off - j + i] = G_{j-i}
    for m in range(_DIRECT_STEPS + 1, n + 1):
        lo = m - 4
        delta = dw * u[lo : m + 1]
        old = buf[:m]
        cross = 0.0 + 0.0j
        cvals = np.empty(5, dtype=complex)
        for k in range(5):
            # G_{j-i} for i = 0..m-1 is a reversed contiguous run of Gr
            r = off - lo - k
            cvals[k] = np.dot(old, Gr[r : r + m])
            cross += cvals[k] * np.conj(delta[k])
        kk = np.arange(5)
        Gd = Gf[off + kk[None, :] - kk[:, None]]
        dd = delta @ Gd @ np.conj(delta)
        acc = acc + 2.0 * cross.real + dd.real
        buf[lo : m + 1] += delta
        v[m] = h * h * acc
        # q_m = h sum_i a'_i G_{m-i}
        q = h * (cvals[4] + np.dot(delta, Gf[off + m - (lo + kk)]))
        vd[m] = 2.0 * np.real(u[m] * np.conj(q))
    return v, vd


def _correlation_matrix(u: np.ndarray, gt: np.ndarray, h: float, scheme: str):
    n, N = u.shape[0] - 1, u.shape[1]
    off = n + 4
    Gf = np.zeros((2 * off + 1, N, N), dtype=complex)
    Gf[off : off + n + 1] = gt
    Gf[:off] = np.conj(np.swapaxes(Gf[2 * off : off : -1], 1, 2))
    v = np.zeros((n + 1, N, N), dtype=complex)
    vd = np.zeros_like(v)
    if not np.any(gt):
        return v, vd

    def H(x):
        return np.conj(np.swapaxes(x, -1, -2))

    for m in range(1, min(n, _DIRECT_STEPS) + 1):
        w = quadrature_weights(m, scheme)
        a = w[:, None, None] * u[: w.size]
        i = np.arange(w.size)
        Gm = Gf[off + i[None, :] - i[:, None]]  # (i, j) -> G_{j-i}
        v[m] = h * h * np.einsum("iab,ijbc,jdc->ad", a, Gm, a.conj())
        q = h * np.einsum("iab,ibc->ac", a, Gf[off + m - i])
        vd[m] = u[m] @ H(q) + q @ H(u[m])
    if n <= _DIRECT_STEPS:
        return v, vd
    buf = np.zeros_like(u)
    w = quadrature_weights(_DIRECT_STEPS, scheme)
    buf[: w.size] = w[:, None, None] * u[: w.size]
    acc = v[_DIRECT_STEPS] / (h * h)
    dw = _TAIL_DELTA[scheme]
    kk = np.arange(5)
    Gd = Gf[off + kk[None, :] - kk[:, None]]
    Gr = Gf[::-1].copy()
    for m in range(_DIRECT_STEPS + 1, n + 1):
        lo = m - 4
        delta = dw[:, None, None] * u[lo : m + 1]
        cvals = np.stack([np.einsum("iab,ibc->ac", buf[:m], Gr[off - lo - k : off - lo - k + m]) for k in range(5)])
        cross = np.einsum("kab,kcb->ac", cvals, delta.conj())
        dd = np.einsum("iab,ijbc,jdc->ad", delta, Gd, delta.conj())
        acc = acc + cross + H(cross) + dd
        buf[lo : m + 1] += delta
        v[m] = h * h * acc
        q = h * (cvals[4] + np.einsum("kab,kbc->ac", delta, Gf[off + m - (lo + kk)]))
        vd[m] = u[m] @ H(q) + q @ H(u[m])
    v = 0.5 * (v + H(v))
    return v, vd


# frequency-domain correlation for densities with algebraic tails

_FILON_OFFSETS = {
    "start": np.array([0.0, 1.0, 2.0, 3.0]),
    "mid": np.array([-1.0, 0.0, 1.0, 2.0]),
    "end": np.array([-2.0, -1.0, 0.0, 1.0]),
}


def _oscillatory_moments(b: np.ndarray) -> np.ndarray:
    """``M_m(b) = int_0^1 x^m exp(i b x) dx`` for ``m = 0..3``."""
    b = np.asarray(b, dtype=float)
    M = np.empty((b.size, 4), dtype=complex)
    small = np.abs(b) < 1.0
    if np.any(small):
        ib = 1j * b[small]
        term = np.ones_like(ib)
        acc = np.zeros((ib.size, 4), dtype=complex)
        for k in range(24):
            if k:
                term = term * ib / k
            acc += term[:, None] / (np.arange(4) + k + 1)
        M[small] = acc
    big = ~small
    if np.any(big):
        ib = 1j * b[big]
        e = np.exp(ib)
        M[big, 0] = (e - 1.0) / ib
        for m in range(1, 4):
            M[big, m] = (e - m * M[big, m - 1]) / ib
    return M


def _filon_weights(eps: np.ndarray, h: float) -> dict:
    """Per-node weights ``c_j`` with ``int_{t_k}^{t_k+h} u(s) exp(-i eps
    (t_k + h - s)) ds ~ sum_j c_j u_{k + o_j}`` for cubic interpolation."""
    b = eps * h
    M = _oscillatory_moments(b)
    ph = h * np.exp(-1j * b)
    out = {}
    for key, o in _FILON_OFFSETS.items():
        P = np.linalg.inv(np.vander(o, 4, increasing=True))
        out[key] = ph[:, None] * (M @ P)
    return out


def _taper(x):
    """C^3 step from 1 at ``x <= 0`` to 0 at ``x >= 1``."""
    x = np.clip(x, 0.0, 1.0)
    return 1.0 - x**4 * (35.0 - 84.0 * x + 70.0 * x**2 - 20.0 * x**3)


def _frequency_nodes(system_levels, reservoirs: Sequence[ReservoirSpec], t_max: float,
                     order: int = 16, periods: float = 2.0, d_theta: float = 0.01,
                     inner: float = 20.0, outer: float = 100.0):
    """Gauss-Legendre nodes in ``theta`` with ``eps = c + d tan(theta)`` on
    ``|eps - c| <= outer d``, refined near levels, chemical potentials and
    density features.

    Returns nodes, quadrature weights (tapered beyond ``inner d``) and the
    taper geometry ``(c, inner d, outer d)``.
    """
    c, d = next(r.sd.algebraic_tail for r in reservoirs if r.sd.algebraic_tail is not None)
    lam1, lam2 = inner * d, outer * d
    res_scale = max(1.0 / max(t_max, 1e-12), 1e-4)
    feats = [(float(e), res_scale) for e in system_levels]
    for r in reservoirs:
        feats.append((r.mu0, max(r.T0, 1e-4)))
        feats += list(r.sd.features)
    mults = np.array([0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    pts = [c - lam1, c + lam1]
    for pos, sc in feats:
        pts += list(pos + sc * mults) + list(pos - sc * mults[1:])
    top = math.atan(outer)
    edges = np.unique(np.concatenate([[-top, top], np.arctan((np.array(pts) - c) / d)]))
    edges = edges[(edges >= -top) & (edges <= top)]
    x, w = np.polynomial.legendre.leggauss(order)
    # |w_eps|^2 oscillates in eps with period 2 pi / t
    d_eps = periods * 2.0 * math.pi / max(t_max, 1e-12)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        span = d * (math.tan(b) - math.tan(a))
        m = max(1, int(math.ceil((b - a) / d_theta)), int(math.ceil(span / d_eps)))
        e = np.linspace(a, b, m + 1)
        mid = 0.5 * (e[1:] + e[:-1])
        hw = 0.5 * (e[1:] - e[:-1])
        nodes.append((mid[:, None] + hw[:, None] * x).ravel())
        weights.append((hw[:, None] * w).ravel())
    theta = np.concatenate(nodes)
    wt = np.concatenate(weights)
    eps = c + d * np.tan(theta)
    jac = d / np.cos(theta) ** 2
    chi = _taper((np.abs(eps - c) - lam1) / (lam2 - lam1))
    return eps, wt * jac * chi, (c, lam1, lam2)


def _tail_transforms(reservoirs, weights, ref: float, geometry, h: float, n: int,
                     order: int = 16):
    """Far-tail moments for the asymptotic part of ``|w_eps|^2``.

    With ``phi(x) = sum_a c_a J_a f_a (1 - taper) / x^2`` at ``eps = ref + x``
    returns ``tau = int phi`` and, on the grid, ``O(t) = int phi e^{i x t}``
    and ``dO/dt``. Because ``phi`` switches on smoothly over the taper
    width, ``O`` dies out within a few hundred inverse widths and is set to
    zero afterwards; the oscillating integrals are themselves tapered off
    beyond ``100 start``, where ``phi`` is negligible.
    """
    c, lam1, lam2 = geometry
    fns = [spectral._weight(r.sd, r.T0, r.mu0, r.statistics) for r in reservoirs]

    def phi(x):
        e = ref + x
        val = sum(cw * f(e) for cw, f in zip(weights, fns))
        return val * (1.0 - _taper((np.abs(e - c) - lam1) / (lam2 - lam1))) / (x * x)

    start = max(lam1 - abs(c - ref), 1e-3)
    tau = sum(
        integrate.quad(lambda x, s=s: float(phi(np.array([s * x]))[0]), start, np.inf,
                       limit=400, epsabs=1e-18, epsrel=1e-12)[0]
        for s in (1.0, -1.0)
    )
    width = lam2 - lam1
    k_cut = min(n, max(8, int(math.ceil(300.0 / (width * h)))))
    t_cut = k_cut * h
    x_far = 100.0 * start
    x_max = 2.0 * x_far
    panel = min(math.pi / t_cut, width / 8.0)
    m = int(math.ceil((x_max - start) / panel))
    gx, gw = np.polynomial.legendre.leggauss(order)
    e = np.linspace(start, x_max, m + 1)
    hw = 0.5 * np.diff(e)
    x = ((0.5 * (e[1:] + e[:-1]))[:, None] + hw[:, None] * gx).ravel()
    wx = (hw[:, None] * gw).ravel()
    wx = wx * _taper((x - x_far) / x_far)
    pp, pm = phi(x) * wx, phi(-x) * wx
    O = np.zeros(n + 1, dtype=complex)
    dO = np.zeros(n + 1, dtype=complex)
    rot = np.exp(1j * x * h)
    ph = np.ones_like(rot)
    for k in range(k_cut + 1):
        O[k] = np.dot(pp, ph) + np.dot(pm, np.conj(ph))
        dO[k] = 1j * (np.dot(pp * x, ph) - np.dot(pm * x, np.conj(ph)))
        ph = ph * rot
    O[0] = tau
    return tau, O, dO


def _correlation_frequency(u: np.ndarray, udot: np.ndarray, system_levels,
                           reservoirs: Sequence[ReservoirSpec], couplings: Sequence[np.ndarray],
                           h: float):
    """``v`` and ``vdot`` for an (n+1, N, N) propagator from the frequency
    representation; `couplings` are the reservoirs' coupling matrices.

    The band ``|eps - c| < inner d`` is integrated on nodes. Beyond it the
    leading asymptotic ``w_eps ~ (u(t) - u(0) e^{-i eps t}) / (i eps)`` is
    integrated semi-analytically; a smooth taper joins the two regions.
    """
    n, N = u.shape[0] - 1, u.shape[1]
    if n < 3:
        raise ConfigurationError("frequency-domain correlation needs at least 3 steps")
    eps, wq, geom = _frequency_nodes(system_levels, reservoirs, n * h)
    # lead-resolved spectral weights J_a f_a on the nodes
    lead_w = [spectral._weight(r.sd, r.T0, r.mu0, r.statistics)(eps) * wq for r in reservoirs]
    ref = float(np.mean(system_levels))
    c = _filon_weights(eps, h)
    rot = np.exp(-1j * eps * h)
    v = np.zeros((n + 1, N, N), dtype=complex)
    vd = np.zeros_like(v)
    if N == 1:
        weight = sum(float(np.real(C[0, 0])) * lw for C, lw in zip(couplings, lead_w))
        us = u[:, 0, 0]
        w = np.zeros(eps.size, dtype=complex)
        for k in range(n):
            key = "start" if k == 0 else ("end" if k + 2 > n else "mid")
            o = _FILON_OFFSETS[key].astype(int)
            w = rot * w + c[key] @ us[k + o]
            v[k + 1, 0, 0] = np.dot(weight, w.real**2 + w.imag**2)
            vd[k + 1, 0, 0] = 2.0 * np.dot(weight, np.real(np.conj(w) * us[k + 1]))
    else:
        w = np.zeros((eps.size, N, N), dtype=complex)
        for k in range(n):
            key = "start" if k == 0 else ("end" if k + 2 > n else "mid")
            o = _FILON_OFFSETS[key].astype(int)
            w = rot[:, None, None] * w + np.einsum("mj,jab->mab", c[key], u[k + o])
            uk = u[k + 1]
            for C, lw in zip(couplings, lead_w):
                wc = w @ C
                v[k + 1] += np.einsum("m,mab,mcb->ac", lw, wc, np.conj(w))
                x = np.einsum("m,mab,cb->ac", lw, wc, np.conj(uk))
                vd[k + 1] += x + x.conj().T
    # asymptotic far tails, one reservoir (coupling matrix) at a time
    t = h * np.arange(n + 1)
    ph = np.exp(1j * ref * t)[:, None, None]
    ut = ph * u
    utd = ph * (udot + 1j * ref * u)
    same = N == 1 or all(np.allclose(C, couplings[0]) for C in couplings)
    groups = [(couplings[0] if N > 1 else np.eye(1), reservoirs,
               [float(np.real(C[0, 0])) if N == 1 else 1.0 for C in couplings])] if same else [
        (C, [r], [1.0]) for C, r in zip(couplings, reservoirs)]
    for C, rs, cw in groups:
        tau, O, dO = _tail_transforms(rs, cw, ref, geom, h, n)
        x = (u @ C) @ np.conj(np.swapaxes(u, 1, 2))
        v += tau * (x + u[0] @ C @ u[0].conj().T)
        y = (udot @ C) @ np.conj(np.swapaxes(u, 1, 2))
        vd += tau * (y + np.conj(np.swapaxes(y, 1, 2)))
        cross = (ut @ C @ u[0].conj().T) * O[:, None, None]
        dcross = (utd @ C @ u[0].conj().T) * O[:, None, None] + (ut @ C @ u[0].conj().T) * dO[:, None, None]
        v -= cross + np.conj(np.swapaxes(cross, 1, 2))
        vd -= dcross + np.conj(np.swapaxes(dcross, 1, 2))
    v[0] = 0.0
    vd[0] = 0.0
    v = 0.5 * (v + np.conj(np.swapaxes(v, 1, 2)))
    return v, vd


def _use_frequency_route(reservoirs: Sequence[ReservoirSpec]) -> bool:
    return any(
        r.sd.algebraic_tail is not None and not (r.statistics is Statistics.BOSE and r.T0 == 0)
        for r in reservoirs
    )


def compute_correlation(gfs: GreenFunctionSet, reservoirs: Sequence[ReservoirSpec],
                        lattice: Optional[KernelLattice] = None, method: str = "auto") -> GreenFunctionSet:
    """Fill ``v(t, t)`` and its derivative into a solved propagator set.

    Parameters
    ----------
    method : {"auto", "time", "frequency"}
        ``"time"`` uses the 2-D product quadrature with the noise kernel;
        ``"frequency"`` the spectral representation. ``"auto"`` picks the
        frequency route when a density has an algebraic tail.
    """
    if method not in ("auto", "time", "frequency"):
        raise ConfigurationError(f"unknown correlation method {method!r}")
    grid = gfs.grid
    N = gfs.dimension
    h = grid.dt
    diag = _is_diagonal(gfs.epsilon) and all(_is_diagonal(r.coupling_matrix(N)) for r in reservoirs)
    if method == "auto":
        method = "frequency" if _use_frequency_route(reservoirs) else "time"
    if method == "frequency":
        if not any(r.sd.algebraic_tail is not None for r in reservoirs):
            raise ConfigurationError("frequency route needs a density with an algebraic tail")
        levels = np.real(np.diag(gfs.epsilon))
        if diag:
            v = np.zeros((grid.n_steps + 1, N, N), dtype=complex)
            vd = np.zeros_like(v)
            for i in range(N):
                cs = [r.coupling_matrix(N)[i : i + 1, i : i + 1] for r in reservoirs]
                sl = (slice(None), slice(i, i + 1), slice(i, i + 1))
                vi, vdi = _correlation_frequency(gfs.u[sl], gfs.udot[sl], [levels[i]], reservoirs, cs, h)
                v[:, i, i] = vi[:, 0, 0]
                vd[:, i, i] = vdi[:, 0, 0]
        else:
            cs = [r.coupling_matrix(N) for r in reservoirs]
            v, vd = _correlation_frequency(gfs.u, gfs.udot, levels, reservoirs, cs, h)
        return replace(gfs, v=_freeze(v), vdot=_freeze(vd))
    if lattice is None:
        n = grid.n_steps
        t = grid.dt * np.arange(n + 1)
        gt = np.zeros((n + 1, N, N), dtype=complex)
        for r in reservoirs:
            gt += spectral.noise_kernel(r, t)[:, None, None] * r.coupling_matrix(N)
    else:
        gt = lattice.gt
    if diag:
        v = np.zeros((grid.n_steps + 1, N, N), dtype=complex)
        vd = np.zeros_like(v)
        for i in range(N):
            vi, vdi = _correlation_scalar(gfs.u[:, i, i], gt[:, i, i], h, gfs.scheme)
            v[:, i, i] = vi
            vd[:, i, i] = vdi
    else:
        v, vd = _correlation_matrix(gfs.u, gt, h, gfs.scheme)
    return replace(gfs, v=_freeze(v), vdot=_freeze(vd))


def solve(system: SystemSpec, reservoirs: Sequence[ReservoirSpec], grid: TimeGrid,
          scheme: str = "gregory", method: str = "auto") -> GreenFunctionSet:
    """Propagator and correlation in one call."""
    use_freq = method == "frequency" or (method == "auto" and _use_frequency_route(reservoirs))
    lat = kernel_lattice(system, reservoirs, grid, noise=not use_freq)
    gfs = solve_propagator(system, reservoirs, grid, scheme=scheme, lattice=lat)
    return compute_correlation(gfs, reservoirs, lattice=None if use_freq else lat, method=method)


# ---------------------------------------------------------------------------
# steady state


def steady_occupation_spectral(sd, omega_s: float, T0: float, mu0: float = 0.0,
                               statistics: Statistics | str = Statistics.BOSE) -> float:
    """``n(inf) = int D(omega) f(omega, T0, mu0) d omega``.

    Raises
    ------
    NoThermalizationError
        When a localized bound state exists.
    """
    stats = Statistics(statistics)
    if spectral.find_bound_states(sd, omega_s):
        raise NoThermalizationError("bound state present: the system does not thermalize")
    if stats is Statistics.BOSE and T0 == 0:
        return 0.0
    occ = _occupation_weight(T0, mu0, stats)
    return spectral.continuum_weight(sd, omega_s, occ)


def _occupation_weight(T0, mu0, stats):
    def occ(x):
        x = np.asarray(x, dtype=float)
        if stats is Statistics.BOSE:
            with np.errstate(over="ignore", divide="ignore"):
                return np.where(x > mu0, 1.0 / np.expm1(np.maximum(x - mu0, 1e-300) / T0), 0.0)
        return be_fd(x, T0, mu0, Statistics.FERMI)

    return occ


def steady_occupation(system: SystemSpec, reservoirs: Sequence[ReservoirSpec]) -> np.ndarray:
    """Frequency-domain steady occupation for diagonal multi-reservoir setups.

    Each level ``i`` sees ``J_i = sum_a C_a,ii J_a`` and
    ``n_i = int D_i(omega) sum_a C_a,ii J_a f_a / J_i d omega``.
    """
    N = system.dimension
    if not _diagonal_structure(system, reservoirs):
        raise ConfigurationError("spectral steady state needs diagonal couplings")
    out = np.zeros(N)
    for i in range(N):
        eps = float(np.real(system.epsilon[i, i]))
        weights = [float(np.real(r.coupling_matrix(N)[i, i])) for r in reservoirs]
        parts = [r.sd for r in reservoirs]
        total = spectral.SumDensity(parts, weights)
        if spectral.find_bound_states(total, eps):
            raise NoThermalizationError(f"bound state on level {i}: no thermalization")
        occs = [_occupation_weight(r.T0, r.mu0, r.statistics) for r in reservoirs]

        def num(x, parts=parts, weights=weights, occs=occs, total=total):
            jt = total(x)
            s = sum(c * p(x) * o(x) for c, p, o in zip(weights, parts, occs))
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.where(jt > 0, s / np.where(jt > 0, jt, 1.0), 0.0)

        pts = [r.mu0 for r in reservoirs if r.statistics is Statistics.FERMI]
        out[i] = spectral.continuum_integral(
            total,
            lambda x, total=total, eps=eps, num=num: spectral.spectral_function(total, eps, x) * num(x),
            points=spectral._peak_points(total, eps) + pts,
        )
    return out


def detect_steady_state(times: np.ndarray, series: np.ndarray, window: float = 5.0,
                        rtol: float = 1e-6) -> Optional[int]:
    """First index after which every entry of `series` changes by less than
    `rtol` (relative) over a trailing `window`; ``None`` if never."""
    times = np.asarray(times)
    s = np.asarray(series)
    s = s.reshape(s.shape[0], -1)
    dt = times[1] - times[0]
    lag = int(round(window / dt))
    if lag < 1 or lag >= s.shape[0]:
        return None
    diff = np.abs(s[lag:] - s[:-lag])
    scale = np.maximum(np.abs(s[lag:]), 1e-12)
    ok = np.all(diff <= rtol * scale, axis=1)
    # require the condition to hold from some index to the end
    bad = np.nonzero(~ok)[0]
    first = 0 if bad.size == 0 else bad[-1] + 1
    if first >= ok.size:
        return None
    return int(first + lag)
