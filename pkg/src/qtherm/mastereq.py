"""Exact time-convolutionless master equation: coefficients from the Green
functions, the generator and a fixed-grid propagator."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from . import spectral
from .model import ConfigurationError, SolverError, Statistics, TimeGrid
from .states import LEAK_TOL, ReducedState, fermion_operators

__all__ = [
    "CoefficientSeries",
    "coefficients",
    "steady_coefficients",
    "generator",
    "population_generator",
    "propagate_master_equation",
    "MasterEquationResult",
]

DET_GUARD = 1e-8
RK4_STABILITY = 2.5  # a little inside the real-axis limit 2.785


def _dag(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


@dataclass(frozen=True)
class CoefficientSeries:
    """Renormalized energy, dissipation and fluctuation coefficients.

    Arrays have shape (n+1, N, N); samples where ``|det u| < 1e-8`` are NaN
    and flagged ``False`` in `defined`.
    """

    grid: TimeGrid
    eps_r: np.ndarray
    gamma: np.ndarray
    gamma_tilde: np.ndarray
    defined: np.ndarray
    statistics: Statistics

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def omega_r(self) -> np.ndarray:
        """Diagonal renormalized energies, shape (n+1, N), real."""
        return np.real(np.diagonal(self.eps_r, axis1=1, axis2=2))


def coefficients(gfs, det_guard: float = DET_GUARD) -> CoefficientSeries:
    """Coefficients from ``X = udot u^-1``.

    ``eps_r = i (X - X^dagger)/2``, ``gamma = -(X + X^dagger)/2`` and
    ``gamma_tilde = vdot - (X v + v X^dagger)``.
    """
    if gfs.v is None:
        raise ConfigurationError("correlation not computed")
    u, ud = gfs.u, gfs.udot
    det = np.abs(np.linalg.det(u))
    ok = det >= det_guard
    N = gfs.dimension
    X = np.full(u.shape, np.nan, dtype=complex)
    if np.any(ok):
        X[ok] = ud[ok] @ np.linalg.inv(u[ok])
    Xd = _dag(X)
    eps_r = 0.5j * (X - Xd)
    gamma = -0.5 * (X + Xd)
    gt = gfs.vdot - (X @ gfs.v + gfs.v @ Xd)
    gt = 0.5 * (gt + _dag(gt))
    for a in (eps_r, gamma, gt):
        a.flags.writeable = False
    ok.flags.writeable = False
    return CoefficientSeries(gfs.grid, eps_r, gamma, gt, ok, gfs.statistics)


def steady_coefficients(sd, omega_s: float, T0: float, mu0: float = 0.0,
                        statistics: Statistics | str = Statistics.BOSE):
    """Asymptotic ``(omega_r, gamma, gamma_tilde)`` of a single level.

    With a bound state ``omega_r = omega_b`` and ``gamma = 0``; otherwise the
    dominant resonance pole ``z`` gives ``omega_r = Re z`` and
    ``gamma = -Im z``, and ``gamma_tilde = 2 gamma n(inf)``.

    Returns
    -------
    omega_r, gamma, gamma_tilde : float
        ``gamma_tilde`` is NaN when a bound state prevents a steady state.
    """
    from .greenfn import steady_occupation_spectral

    bs = spectral.find_bound_states(sd, omega_s)
    if bs:
        top = max(bs, key=lambda b: b.Z)
        return top.omega_b, 0.0, float("nan")
    z = spectral.resonance_pole(sd, omega_s)
    if z is None:
        raise SolverError("no resonance pole found")
    nbar = steady_occupation_spectral(sd, omega_s, T0, mu0, statistics)
    gamma = -z.imag
    return z.real, gamma, 2.0 * gamma * nbar


# ---------------------------------------------------------------------------
# generators


def _boson_generator(rho, w, g, gt):
    n = np.arange(rho.shape[0], dtype=float)
    sq = np.sqrt(n)
    # a rho a^dagger and a^dagger rho a
    a_r_ad = np.zeros_like(rho)
    a_r_ad[:-1, :-1] = sq[1:, None] * rho[1:, 1:] * sq[None, 1:]
    ad_r_a = np.zeros_like(rho)
    ad_r_a[1:, 1:] = sq[1:, None] * rho[:-1, :-1] * sq[None, 1:]
    n_r = n[:, None] * rho
    r_n = rho * n[None, :]
    out = -1j * w * (n_r - r_n)
    out += g * (2 * a_r_ad - n_r - r_n)
    out += gt * (ad_r_a + a_r_ad - n_r - r_n - rho)
    return out


def _fermion_generator(rho, eps, g, gt, ops):
    N = len(ops)
    H = sum(eps[i, j] * ops[i].T @ ops[j] for i in range(N) for j in range(N))
    out = -1j * (H @ rho - rho @ H)
    for i in range(N):
        ai = ops[i]
        adi = ai.T
        for j in range(N):
            aj = ops[j]
            if g[i, j] != 0:
                out += g[i, j] * (2 * aj @ rho @ adi - adi @ aj @ rho - rho @ adi @ aj)
            if gt[i, j] != 0:
                out += gt[i, j] * (adi @ rho @ aj - aj @ rho @ adi + adi @ aj @ rho - rho @ aj @ adi)
    return out


def generator(rho: np.ndarray, eps_r, gamma, gamma_tilde, statistics, ops=None) -> np.ndarray:
    """Right-hand side ``d rho/dt`` at one instant.

    Bosons (single mode, Fock basis)::

        -i w [n, rho] + g (2 a rho a+ - n rho - rho n)
                     + gt (a+ rho a + a rho a+ - n rho - rho (n + 1))

    Fermions (``2^N`` occupation basis)::

        -i [H_r, rho] + sum_ij g_ij (2 a_j rho a_i+ - a_i+ a_j rho - rho a_i+ a_j)
            + gt_ij (a_i+ rho a_j - a_j rho a_i+ + a_i+ a_j rho - rho a_j a_i+)
    """
    stats = Statistics(statistics)
    if stats is Statistics.BOSE:
        w = complex(np.asarray(eps_r).reshape(-1)[0])
        g = complex(np.asarray(gamma).reshape(-1)[0])
        t = complex(np.asarray(gamma_tilde).reshape(-1)[0])
        return _boson_generator(rho, w.real, g.real, t.real)
    eps = np.atleast_2d(eps_r)
    if ops is None:
        ops = fermion_operators(eps.shape[0])
    return _fermion_generator(rho, eps, np.atleast_2d(gamma), np.atleast_2d(gamma_tilde), ops)


def population_generator(p: np.ndarray, gamma: float, gamma_tilde: float) -> np.ndarray:
    """Single-mode bosonic populations:
    ``pdot_n = 2 g [(n+1) p_{n+1} - n p_n]
    + gt [n p_{n-1} + (n+1) p_{n+1} - (2n+1) p_n]``.

    `p` may carry leading batch axes; the last axis is the Fock index.
    """
    p = np.asarray(p, dtype=float)
    gamma = np.asarray(gamma, dtype=float)[..., None]
    gt = np.asarray(gamma_tilde, dtype=float)[..., None]
    n = np.arange(p.shape[-1], dtype=float)
    up = np.zeros_like(p)
    up[..., :-1] = n[1:] * p[..., 1:]  # (n+1) p_{n+1}
    down = np.zeros_like(p)
    down[..., 1:] = n[1:] * p[..., :-1]  # n p_{n-1}
    return 2 * gamma * (up - n * p) + gt * (down + up - (2 * n + 1) * p)


# ---------------------------------------------------------------------------
# propagation


@dataclass(frozen=True)
class MasterEquationResult:
    """States from the master equation at grid samples ``0, 2, 4, ...``."""

    times: np.ndarray
    indices: np.ndarray
    states: np.ndarray
    populations_only: bool
    leakage: float
    statistics: Statistics = Statistics.BOSE

    def state(self, k: int) -> ReducedState:
        m = np.diag(self.states[k]) if self.populations_only else self.states[k]
        if self.statistics is Statistics.BOSE:
            return ReducedState("boson_fock", m)
        return ReducedState("fermi_fock", m, n_levels=int(np.log2(m.shape[0])))


def _population_radius(g: float, gt: float, dim: int) -> float:
    """Spectral radius of the population generator (a birth-death chain,
    symmetrized to a real tridiagonal matrix)."""
    n = np.arange(dim, dtype=float)
    diag = -(2 * g * n + gt * (2 * n + 1))
    birth = gt * (n[:-1] + 1)  # n -> n+1
    death = (2 * g + gt) * n[1:]  # n+1 -> n
    prod = birth * death
    if np.any(prod < 0):
        # negative transient rates: fall back to Gershgorin
        return float(np.max(np.abs(diag)) + 2 * np.max(np.abs(np.r_[birth, death])))
    lam = eigvalsh_tridiagonal(diag, np.sqrt(prod))
    return float(np.max(np.abs(lam)))


def _rate_bound(co: CoefficientSeries, dim: int, populations_only: bool, samples: int = 64) -> float:
    """Largest generator eigenvalue modulus over a subsample of the grid."""
    ks = np.unique(np.linspace(0, co.grid.n_steps, samples).astype(int))
    ks = np.union1d(ks, [int(np.nanargmax(np.abs(co.gamma_tilde).reshape(len(co.gamma_tilde), -1).max(1)))])
    out = 0.0
    if co.statistics is Statistics.BOSE:
        for k in ks:
            g = float(np.real(co.gamma[k, 0, 0]))
            gt = float(np.real(co.gamma_tilde[k, 0, 0]))
            r = _population_radius(g, gt, dim)
            if not populations_only:
                r = np.hypot(r, abs(float(np.real(co.eps_r[k, 0, 0]))) * (dim - 1))
            out = max(out, r)
        return out
    ops = fermion_operators(co.eps_r.shape[1])
    eye = np.eye(dim)
    for k in ks:
        cols = [generator(eye[:, [i]] @ eye[[j], :], co.eps_r[k], co.gamma[k], co.gamma_tilde[k],
                          co.statistics, ops).ravel() for i in range(dim) for j in range(dim)]
        out = max(out, float(np.max(np.abs(np.linalg.eigvals(np.array(cols).T)))))
    return out


def _lagrange4(co: CoefficientSeries, pos: np.ndarray):
    """Coefficients at fractional grid positions by local cubic interpolation
    (exact at integer positions)."""
    n = co.grid.n_steps
    pos = np.asarray(pos, dtype=float)
    base = np.clip(np.floor(pos).astype(int) - 1, 0, max(n - 3, 0))
    x = pos - base
    out = []
    for arr in (co.eps_r, co.gamma, co.gamma_tilde):
        if n < 3:
            lo = np.clip(np.floor(pos).astype(int), 0, n - 1)
            f = pos - lo
            out.append((1 - f)[:, None, None] * arr[lo] + f[:, None, None] * arr[lo + 1])
            continue
        acc = np.zeros((pos.size,) + arr.shape[1:], dtype=arr.dtype)
        for j in range(4):
            w = np.ones_like(x)
            for m in range(4):
                if m != j:
                    w *= (x - m) / (j - m)
            acc += w[:, None, None] * arr[base + j]
        out.append(acc)
    return out


def propagate_master_equation(co: CoefficientSeries, rho0, populations_only: Optional[bool] = None,
                              check_leakage: bool = True, max_substeps: int = 4096) -> MasterEquationResult:
    """Integrate the master equation with classical RK4.

    Macro steps are ``2 dt`` with the odd samples as midpoints, so without
    stiffness the coefficients are used exactly as sampled. When the largest
    generator eigenvalue (which grows with the Fock truncation) puts ``2 dt``
    outside the RK4 stability region, each macro step is split into equal
    substeps with coefficients from local cubic interpolation.

    Parameters
    ----------
    co : CoefficientSeries
    rho0 : ReducedState or ndarray
        Bosons: Fock matrix (or population vector); fermions: ``2^N`` matrix.
    populations_only : bool, optional
        Evolve only the diagonal of a bosonic state. Defaults to True when
        `rho0` is diagonal.

    Returns
    -------
    MasterEquationResult
        States at grid samples ``0, 2, 4, ...``; when coefficients become
        undefined (warning) only the leading defined stretch is covered.

    Raises
    ------
    SolverError
        When the coefficients are undefined from the start, more than `max_substeps` substeps
        would be needed, or population leaks to the top Fock level.
    """
    r0 = rho0.matrix if isinstance(rho0, ReducedState) else np.asarray(rho0, dtype=complex)
    if co.statistics is Statistics.BOSE and r0.ndim == 1:
        r0 = np.diag(r0)
    dim = r0.shape[0]
    n = co.grid.n_steps
    if n < 2:
        raise ConfigurationError("need at least two grid steps")
    if not np.all(co.defined):
        # propagate over the leading defined stretch only
        m = int(np.argmin(co.defined))
        if m < 3:
            raise SolverError("master-equation coefficients undefined (|det u| too small)")
        m -= 1
        warnings.warn(f"coefficients undefined from t = {co.times[m + 1]:.6g}; propagating to "
                      f"t = {co.times[m]:.6g}", RuntimeWarning)
        co = replace(co, grid=TimeGrid(co.grid.dt, m, co.grid.t0), eps_r=co.eps_r[: m + 1],
                     gamma=co.gamma[: m + 1], gamma_tilde=co.gamma_tilde[: m + 1],
                     defined=co.defined[: m + 1])
        n = m
    stats = co.statistics
    if populations_only is None:
        populations_only = stats is Statistics.BOSE and np.allclose(r0, np.diag(np.diag(r0)))
    if populations_only and stats is not Statistics.BOSE:
        raise ConfigurationError("population-only propagation is bosonic")
    H = 2 * co.grid.dt
    lam = _rate_bound(co, dim, populations_only)
    sub = max(1, int(np.ceil(H * lam / RK4_STABILITY)))
    if sub > max_substeps:
        raise SolverError(f"master equation needs {sub} substeps per step (rate bound {lam:.3g}); reduce n_max or dt")
    h = H / sub
    idx = np.arange(0, n + 1, 2)
    out_shape = (idx.size, dim) if populations_only else (idx.size, dim, dim)
    out = np.empty(out_shape, dtype=float if populations_only else complex)
    ops = None if stats is Statistics.BOSE else fermion_operators(co.eps_r.shape[1])

    # coefficients at every RK4 node, positions in units of dt
    frac = np.arange(2 * sub + 1) / sub  # node offsets 0, 1/sub, ..., 2
    pos = (idx[:-1, None] + frac[None, :]).ravel()
    if sub == 1:
        ci = pos.astype(int)
        E, Gm, Gt = co.eps_r[ci], co.gamma[ci], co.gamma_tilde[ci]
    else:
        E, Gm, Gt = _lagrange4(co, pos)
    stride = 2 * sub + 1

    if populations_only:
        y = np.real(np.diag(r0)).copy()
        gam = np.real(Gm[:, 0, 0])
        gtl = np.real(Gt[:, 0, 0])

        def f(c, y):
            return population_generator(y, gam[c], gtl[c])
    else:
        y = np.array(r0, dtype=complex)

        def f(c, y):
            return generator(y, E[c], Gm[c], Gt[c], stats, ops)

    out[0] = y
    for s in range(1, idx.size):
        base = (s - 1) * stride
        for j in range(sub):
            c0 = base + 2 * j
            k1 = f(c0, y)
            k2 = f(c0 + 1, y + 0.5 * h * k1)
            k3 = f(c0 + 1, y + 0.5 * h * k2)
            k4 = f(c0 + 2, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not populations_only:
            y = 0.5 * (y + y.conj().T)
        out[s] = y
    top = out[:, -1] if populations_only else np.real(out[:, -1, -1])
    leak = float(np.max(np.abs(top))) if stats is Statistics.BOSE else 0.0
    if check_leakage and leak > LEAK_TOL:
        raise SolverError(f"population {leak:.2e} reached the top Fock level; enlarge n_max")
    return MasterEquationResult(co.grid.times[idx], idx, out, populations_only, leak, stats)
