"""Brute-force references: a reservoir discretized into finitely many modes,
exact single-particle dynamics of the total quadratic Hamiltonian, and the
reduced occupation of the total Gibbs state."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from .model import (
    ConfigurationError,
    ReservoirSpec,
    SolverError,
    Statistics,
    SystemSpec,
    TimeGrid,
    be_fd,
)

__all__ = [
    "DiscretizedTotalSystem",
    "discretize_reservoir",
    "exact_quadratic_dynamics",
    "gibbs_trace",
    "eigenmode_occupation",
    "compare_dynamics",
]


@dataclass(frozen=True)
class DiscretizedTotalSystem:
    """Single-particle matrix of system plus discretized reservoirs.

    Attributes
    ----------
    h : ndarray, shape (N+M, N+M)
        Hermitian; system block first.
    n_system : int
    omegas : ndarray, shape (M,)
        Reservoir mode frequencies.
    mode_weights : ndarray, shape (M,)
        Frequency spacing represented by each mode.
    mode_T, mode_mu : ndarray, shape (M,)
        Initial temperature and chemical potential of each mode.
    statistics : Statistics
    recurrence_time : float
        ``2 pi / max(d omega)``; comparisons with the continuum are valid
        only before it.
    mass_window, mass_total : float
        ``sum |V|^2`` against the exact ``int J`` over the window.
    """

    h: np.ndarray
    n_system: int
    omegas: np.ndarray
    mode_weights: np.ndarray
    mode_T: np.ndarray
    mode_mu: np.ndarray
    statistics: Statistics
    recurrence_time: float
    mass_discrete: float
    mass_window: float
    mass_total: float


def _mode_grid(sd, K: int, window):
    lo, hi = window
    dw = (hi - lo) / K
    w = lo + dw * (np.arange(K) + 0.5)
    return w, np.full(K, dw)


def discretize_reservoir(system: SystemSpec, reservoirs: Sequence[ReservoirSpec], K: int,
                         window: Optional[tuple[float, float]] = None) -> DiscretizedTotalSystem:
    """Uniform midpoint discretization ``V_k = sqrt(J(omega_k) d omega)``.

    A coupling matrix ``C = B B^dagger`` is realized with ``N`` modes per
    frequency, mode ``m`` coupling to level ``i`` with ``B_im V_k``.

    Parameters
    ----------
    system : SystemSpec
    reservoirs : sequence of ReservoirSpec
    K : int
        Frequencies per reservoir.
    window : (float, float), optional
        Frequency window; defaults to each density's quadrature window.

    Warns
    -----
    RuntimeWarning
        When the window misses more than ``1e-6`` of the spectral mass.
    """
    if K < 1:
        raise ConfigurationError("need at least one mode")
    N = system.dimension
    blocks_w, blocks_dw, blocks_V, Ts, mus = [], [], [], [], []
    mass_d = mass_w = mass_t = 0.0
    for r in reservoirs:
        win = window if window is not None else r.sd.window
        w, dw = _mode_grid(r.sd, K, win)
        amp = np.sqrt(r.sd(w) * dw)
        c = r.coupling_matrix(N)
        lam, vec = np.linalg.eigh(c)
        B = vec * np.sqrt(np.clip(lam, 0.0, None))
        # modes ordered (k, m)
        V = np.einsum("im,k->ikm", B, amp).reshape(N, K * N)
        blocks_w.append(np.repeat(w, N))
        blocks_dw.append(np.repeat(dw, N))
        blocks_V.append(V)
        Ts.append(np.full(K * N, r.T0))
        mus.append(np.full(K * N, r.mu0))
        md = float(np.sum(amp**2))
        mw = integrate.quad(lambda x: float(r.sd(x)), win[0], win[1], limit=500, points=[f for f, _ in r.sd.features if win[0] < f < win[1]] or None)[0]
        mt = r.sd.mass()
        mass_d += md
        mass_w += mw
        mass_t += mt
        if mt > 0 and abs(mt - mw) > 1e-6 * mt:
            warnings.warn(
                f"discretization window {win} misses {abs(mt - mw) / mt:.2e} of the spectral mass",
                RuntimeWarning,
            )
    omegas = np.concatenate(blocks_w) if blocks_w else np.zeros(0)
    V = np.concatenate(blocks_V, axis=1) if blocks_V else np.zeros((N, 0))
    M = omegas.size
    h = np.zeros((N + M, N + M), dtype=complex)
    h[:N, :N] = system.epsilon
    h[N:, N:] = np.diag(omegas)
    h[:N, N:] = V
    h[N:, :N] = V.conj().T
    dws = np.concatenate(blocks_dw) if blocks_dw else np.zeros(0)
    rec = 2 * math.pi / dws.max() if dws.size else math.inf
    return DiscretizedTotalSystem(
        h=h,
        n_system=N,
        omegas=omegas,
        mode_weights=dws,
        mode_T=np.concatenate(Ts) if Ts else np.zeros(0),
        mode_mu=np.concatenate(mus) if mus else np.zeros(0),
        statistics=system.statistics,
        recurrence_time=rec,
        mass_discrete=mass_d,
        mass_window=mass_w,
        mass_total=mass_t,
    )


def two_level(omega_s: float, omega_1: float, g: float, statistics=Statistics.BOSE,
              T0: float = 0.0, mu0: float = 0.0) -> DiscretizedTotalSystem:
    """One system level coupled to a single mode with amplitude `g`."""
    h = np.array([[omega_s, g], [np.conj(g), omega_1]], dtype=complex)
    return DiscretizedTotalSystem(
        h=h, n_system=1, omegas=np.array([omega_1]), mode_weights=np.array([0.0]),
        mode_T=np.array([T0]), mode_mu=np.array([mu0]), statistics=Statistics(statistics),
        recurrence_time=math.inf, mass_discrete=abs(g) ** 2, mass_window=abs(g) ** 2,
        mass_total=abs(g) ** 2,
    )


def _mode_occupations(dts: DiscretizedTotalSystem) -> np.ndarray:
    occ = np.zeros(dts.omegas.size)
    for k, (w, T, mu) in enumerate(zip(dts.omegas, dts.mode_T, dts.mode_mu)):
        if dts.statistics is Statistics.BOSE and T == 0:
            continue
        occ[k] = be_fd(w, T, mu, dts.statistics)
    return occ


def exact_quadratic_dynamics(dts: DiscretizedTotalSystem, grid: TimeGrid,
                             reservoir_init: Optional[tuple[float, float]] = None):
    """Exact ``u(t)`` and ``v(t, t)`` of the discretized total system.

    The system starts empty and every reservoir mode thermal. With
    ``U(t) = exp(-i h t)`` from the Hermitian eigendecomposition,
    ``u = U_SS`` and ``v = U_SE diag(f) U_SE^dagger``.

    Parameters
    ----------
    dts : DiscretizedTotalSystem
    grid : TimeGrid
    reservoir_init : (T0, mu0), optional
        Overrides the per-mode initial temperature and chemical potential.

    Returns
    -------
    u, v : ndarray, shape (n+1, N, N)
    """
    N = dts.n_system
    lam, vec = np.linalg.eigh(dts.h)
    if reservoir_init is not None:
        T0, mu0 = reservoir_init
        dts = DiscretizedTotalSystem(**{**dts.__dict__, "mode_T": np.full_like(dts.mode_T, T0),
                                        "mode_mu": np.full_like(dts.mode_mu, mu0)})
    f = _mode_occupations(dts)
    top = vec[:N, :]
    t = grid.times - grid.t0
    u = np.empty((t.size, N, N), dtype=complex)
    v = np.empty_like(u)
    for s in range(0, t.size, 256):
        ph = np.exp(-1j * np.outer(t[s : s + 256], lam))  # (T, M)
        rows = np.einsum("im,tm,jm->tij", top, ph, vec.conj())  # U_S,: blocks
        u[s : s + 256] = rows[:, :, :N]
        use = rows[:, :, N:]
        v[s : s + 256] = np.einsum("tik,k,tjk->tij", use, f, use.conj())
    return u, v


def eigenmode_occupation(dts: DiscretizedTotalSystem, beta_f: float) -> np.ndarray:
    """``sum_j |<s|psi_j>|^2 f(lambda_j)`` from the total-system eigenmodes."""
    N = dts.n_system
    lam, vec = np.linalg.eigh(dts.h)
    if dts.statistics is Statistics.BOSE:
        if lam.min() <= 0:
            raise SolverError("no thermal total Gibbs state: nonpositive mode frequency")
        f = 1.0 / np.expm1(beta_f * lam)
    else:
        f = be_fd(lam, 1.0 / beta_f, 0.0, Statistics.FERMI)
    return (vec[:N] * f) @ vec[:N].conj().T


def gibbs_trace(dts: DiscretizedTotalSystem, beta_f: float):
    """Reduced occupation of the total Gibbs state.

    Bosons trace out the reservoir by block elimination: with ``Omega =
    exp(-beta_f h)`` split into system (S) and reservoir (E) blocks,
    ``Omega_S = Omega_SS + Omega_SE (I - Omega_EE)^-1 Omega_ES`` and
    ``n = Omega_S (I - Omega_S)^-1``. Fermions use the system block of
    ``(I + exp(beta_f h))^-1``, evaluated through a logistic of the
    eigenvalues because wide bands overflow ``exp(beta_f h)``; then
    ``Omega_S = n (I - n)^-1``.

    Returns
    -------
    Omega_S, nbar : ndarray, shape (N, N)

    Raises
    ------
    SolverError
        Bosons with a nonpositive total-Hamiltonian mode (e.g. a bound state
        below zero) have no thermal total Gibbs state.
    """
    N = dts.n_system
    lam, vec = np.linalg.eigh(dts.h)
    I_S = np.eye(N)
    if dts.statistics is Statistics.FERMI:
        nbar = (vec[:N] * special.expit(-beta_f * lam)) @ vec[:N].conj().T
        return nbar @ np.linalg.inv(I_S - nbar), nbar
    if lam.min() <= 0:
        raise SolverError("no thermal total Gibbs state: nonpositive mode frequency")
    Om = (vec * np.exp(-beta_f * lam)) @ vec.conj().T
    SS, SE, ES, EE = Om[:N, :N], Om[:N, N:], Om[N:, :N], Om[N:, N:]
    Om_S = SS + SE @ np.linalg.solve(np.eye(EE.shape[0]) - EE, ES)
    return Om_S, Om_S @ np.linalg.inv(I_S - Om_S)


def compare_dynamics(gfs, dts: DiscretizedTotalSystem, t_limit: Optional[float] = None):
    """Pointwise ``|du|``, ``|dv|`` between a Volterra solution and the oracle
    on times before the recurrence horizon.

    Returns
    -------
    dict
        ``t``, ``du``, ``dv`` arrays plus ``max_du``, ``max_dv`` and the
        horizon.
    """
    grid = gfs.grid
    u_ex, v_ex = exact_quadratic_dynamics(dts, grid)
    t = grid.times
    horizon = dts.recurrence_time
    lim = horizon if t_limit is None else min(t_limit, horizon)
    m = t <= lim + 1e-12
    du = np.max(np.abs(gfs.u - u_ex), axis=(1, 2))
    dv = np.max(np.abs(gfs.v - v_ex), axis=(1, 2)) if gfs.v is not None else np.zeros_like(du)
    return {
        "t": t[m],
        "du": du[m],
        "dv": dv[m],
        "max_du": float(du[m].max()),
        "max_dv": float(dv[m].max()),
        "recurrence_time": horizon,
    }
