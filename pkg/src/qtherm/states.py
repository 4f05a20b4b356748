"""Reduced density matrices: the closed-form bosonic state, Gibbs-type
steady states, the single-electron-transistor dot state and the propagating
coefficients of the exact solution."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, xlogy

from .model import ConfigurationError, SolverError, Statistics

__all__ = [
    "ReducedState",
    "BosonTrajectory",
    "PropagatingCoefficients",
    "fock_state",
    "truncation_size",
    "closed_form_rho_boson",
    "steady_state_rho",
    "set_rho_fermion",
    "fermion_operators",
    "gaussian_fermion_rho",
    "occupation_matrix",
    "propagating_coefficients",
    "trace_distance",
]

LEAK_TOL = 1e-8


@dataclass(frozen=True)
class ReducedState:
    """System density matrix.

    ``kind`` is ``"boson_fock"`` (single mode, Fock basis ``0..n_max``),
    ``"fermi_fock"`` (``2^N`` occupation basis; for ``N = 2`` the order is
    empty, up, down, doubly occupied) or ``"fermi_gaussian"`` (only the
    one-particle matrix ``n_ij = <a_j^dagger a_i>`` is stored).
    """

    kind: str
    matrix: np.ndarray
    n_levels: int = 1

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def n_max(self) -> int:
        return self.matrix.shape[0] - 1

    def check(self, tol: float = 1e-9) -> None:
        """Raise unless Hermitian with unit trace and no negative eigenvalues."""
        m = self.matrix
        if not np.allclose(m, m.conj().T, atol=1e-12):
            raise SolverError("state is not Hermitian")
        if self.kind == "fermi_gaussian":
            lam = np.linalg.eigvalsh(m)
            if lam.min() < -tol or lam.max() > 1 + tol:
                raise SolverError("fermionic one-particle matrix outside [0, 1]")
            return
        if abs(np.trace(m).real - 1.0) > tol:
            raise SolverError(f"trace {np.trace(m).real:.12f} != 1")
        if np.linalg.eigvalsh(m).min() < -1e-12 - tol:
            raise SolverError("state has negative eigenvalues")


def fock_state(m: int, n_max: int) -> ReducedState:
    rho = np.zeros((n_max + 1, n_max + 1), dtype=complex)
    rho[m, m] = 1.0
    return ReducedState("boson_fock", rho)


def truncation_size(nbar_max: float, initial_index: int = 0, tail: float = 1e-10, minimum: int = 30) -> int:
    """Smallest ``n`` with thermal tail ``(nbar/(1+nbar))^n < tail``, plus the
    initial Fock index, at least `minimum`."""
    nbar_max = max(float(nbar_max), 0.0)
    if nbar_max == 0:
        n = 0
    else:
        r = nbar_max / (1.0 + nbar_max)
        n = int(math.ceil(math.log(tail) / math.log(r)))
    return max(minimum, n + int(initial_index))


# ---------------------------------------------------------------------------
# closed-form bosonic state


@dataclass(frozen=True)
class BosonTrajectory:
    """Closed-form bosonic states along a grid.

    For Fock-diagonal initial states only the populations are stored
    (coherences stay zero); otherwise full matrices at `indices`.
    """

    times: np.ndarray
    populations: Optional[np.ndarray]
    matrices: Optional[np.ndarray]
    n_max: int
    leakage: float

    def state(self, k: int) -> ReducedState:
        if self.matrices is not None:
            return ReducedState("boson_fock", self.matrices[k])
        return ReducedState("boson_fock", np.diag(self.populations[k]))

    def mean_number(self) -> np.ndarray:
        n = np.arange(self.n_max + 1)
        if self.populations is not None:
            return self.populations @ n
        return np.einsum("tnn,n->t", self.matrices, n).real


def _log_c(m: int, k: np.ndarray) -> np.ndarray:
    # log of sqrt(m!) / ((m-k)! sqrt(k!))
    return 0.5 * gammaln(m + 1) - gammaln(m - k + 1) - 0.5 * gammaln(k + 1)


def _log_rising(n: np.ndarray, j: int) -> np.ndarray:
    # ln((n+1)(n+2)...(n+j)) without differencing two large gammaln values
    out = np.zeros(n.shape)
    for i in range(1, j + 1):
        out += np.log(n + i)
    return out


def _boson_pair_block(u: np.ndarray, v: np.ndarray, m: int, mp: int, n_max: int):
    """Contribution of ``|m><m'|`` at every time: shape (T, n_max+1, n_max+1)
    restricted to the diagonal offset ``m - m'``."""
    T = u.size
    off = m - mp
    n = np.arange(n_max + 1)
    out = np.zeros((T, n_max + 1), dtype=complex)  # entries [row r, col r - off]
    w = u / (1.0 + v)
    d = 1.0 - np.abs(u) ** 2 / (1.0 + v)
    d = np.clip(d, 0.0, None)
    # thermal weights n ln(v/(1+v)) - ln(1+v), with ln(v/(1+v)) = -log1p(1/v)
    # so that large n does not cancel two large logarithms
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.where(v > 0, -np.log1p(1.0 / np.where(v > 0, v, 1.0)), -np.inf)
        logp = np.where(n[None, :] > 0, n[None, :] * lr[:, None], 0.0) - np.log1p(v)[:, None]
    for k in range(min(m, mp) + 1):
        j, jp = m - k, mp - k
        rows = n + j  # row index n + j, column n + j'
        valid = rows <= n_max
        if not np.any(valid):
            continue
        if off < 0:
            valid &= (n + jp) <= n_max
        nn = n[valid]
        logw = (
            _log_c(m, np.array(k)) + _log_c(mp, np.array(k))
            + xlogy(k, d)[:, None]
            + logp[:, valid]
            + 0.5 * (_log_rising(nn, j) + _log_rising(nn, jp))[None, :]
        )
        with np.errstate(divide="ignore"):
            amp = np.exp(logw)
            amp = amp * (np.power(w[:, None], j) if j else 1.0) * (np.power(np.conj(w)[:, None], jp) if jp else 1.0)
        out[:, (nn + j)] += amp
    return out


def closed_form_rho_boson(gfs, rho0, n_max: int, indices: Optional[Sequence[int]] = None,
                          check_leakage: bool = True) -> BosonTrajectory:
    """Exact single-mode bosonic state along the grid.

    ``rho(t) = sum_{m m'} rho0_{m m'} sum_k d_k A_mk^dagger rho~[v] A_m'k`` with
    ``d_k = (1 - |u|^2/(1+v))^k``, ``A_mk^dagger`` built from powers of
    ``(u/(1+v)) a^dagger`` and ``rho~[v]`` the thermal state of mean ``v``.

    Parameters
    ----------
    gfs : GreenFunctionSet
        Single-mode, with ``v`` computed.
    rho0 : ReducedState or array_like
        Initial Fock-basis matrix, or a vector of populations.
    n_max : int
        Fock truncation of the output.
    indices : sequence of int, optional
        Grid indices to evaluate (default: all).

    Raises
    ------
    SolverError
        When the population of level `n_max` exceeds ``1e-8``.
    """
    if gfs.v is None or gfs.dimension != 1:
        raise ConfigurationError("closed form needs a single-mode solution with v")
    r0 = rho0.matrix if isinstance(rho0, ReducedState) else np.asarray(rho0, dtype=complex)
    if r0.ndim == 1:
        r0 = np.diag(r0)
    idx = np.arange(gfs.grid.n_steps + 1) if indices is None else np.asarray(indices)
    u = gfs.u[idx, 0, 0]
    v = np.real(gfs.v[idx, 0, 0])
    v = np.clip(v, 0.0, None)
    nz = np.argwhere(np.abs(r0) > 0)
    diagonal = bool(np.all(nz[:, 0] == nz[:, 1]))
    T = idx.size
    if diagonal:
        pops = np.zeros((T, n_max + 1))
        for m in nz[:, 0]:
            pops += np.real(r0[m, m] * _boson_pair_block(u, v, int(m), int(m), n_max))
        mats = None
        top = pops[:, -1]
    else:
        mats = np.zeros((T, n_max + 1, n_max + 1), dtype=complex)
        for m, mp in nz:
            blk = _boson_pair_block(u, v, int(m), int(mp), n_max)
            off = int(m - mp)
            rows = np.arange(n_max + 1)
            cols = rows - off
            ok = (cols >= 0) & (cols <= n_max)
            mats[:, rows[ok], cols[ok]] += r0[m, mp] * blk[:, rows[ok]]
        pops = None
        top = np.real(mats[:, -1, -1])
    leak = float(np.max(top)) if top.size else 0.0
    if check_leakage and leak > LEAK_TOL:
        raise SolverError(f"Fock truncation too small: top-level population {leak:.2e}; enlarge n_max")
    return BosonTrajectory(
        times=gfs.grid.times[idx], populations=pops, matrices=mats, n_max=n_max, leakage=leak
    )


# ---------------------------------------------------------------------------
# fermionic Fock space


def fermion_operators(n_levels: int) -> list[np.ndarray]:
    """Jordan-Wigner annihilators on the ``2^N`` occupation basis.

    Basis index ``b = sum_i n_i 2^i``; for two levels this orders the states
    empty, up (level 0), down (level 1), doubly occupied.
    """
    dim = 2**n_levels
    ops = []
    for i in range(n_levels):
        a = np.zeros((dim, dim))
        for b in range(dim):
            if b >> i & 1:
                sign = (-1) ** bin(b & ((1 << i) - 1)).count("1")
                a[b ^ (1 << i), b] = sign
        ops.append(a)
    return ops


def gaussian_fermion_rho(nmat) -> ReducedState:
    """Fock-space Gibbs-type state with one-particle matrix `nmat`.

    Built in the eigenbasis of ``n`` as a product of ``(1-lambda)(1-N_k) +
    lambda N_k``, which also covers the pure limits ``lambda in {0, 1}``.
    """
    n = np.atleast_2d(np.asarray(nmat, dtype=complex))
    N = n.shape[0]
    lam, W = np.linalg.eigh(n)
    if lam.min() < -1e-9 or lam.max() > 1 + 1e-9:
        raise ConfigurationError("fermionic occupations must lie in [0, 1]")
    lam = np.clip(lam, 0.0, 1.0)
    a = fermion_operators(N)
    dim = 2**N
    rho = np.eye(dim, dtype=complex)
    for k in range(N):
        # b_k = sum_i conj(W_ik) a_i  so that <b_k^dagger b_k> = lambda_k
        b = sum(np.conj(W[i, k]) * a[i] for i in range(N))
        Nk = b.conj().T @ b
        rho = rho @ ((1.0 - lam[k]) * (np.eye(dim) - Nk) + lam[k] * Nk)
    rho = 0.5 * (rho + rho.conj().T)
    return ReducedState("fermi_fock", rho, n_levels=N)


def set_rho_fermion(v) -> ReducedState:
    """Dot state over (empty, up, down, double) from the 2x2 correlation.

    ``rho_00 = det(I - v)``, ``rho_dd = det v``,
    ``rho_ss = v_ss - det v`` and ``rho_up,down = v_up,down``.
    """
    v = np.asarray(v, dtype=complex)
    if v.shape != (2, 2):
        raise ConfigurationError("SET correlation must be 2x2")
    if not np.allclose(v, v.conj().T, atol=1e-12):
        raise ConfigurationError("correlation matrix must be Hermitian")
    lam = np.linalg.eigvalsh(v)
    if lam.min() < -1e-9 or lam.max() > 1 + 1e-9:
        raise ConfigurationError("invalid correlation: eigenvalues outside [0, 1]")
    rho = np.zeros((4, 4), dtype=complex)
    dd = np.linalg.det(v)
    rho[0, 0] = np.linalg.det(np.eye(2) - v)
    rho[3, 3] = dd
    rho[1, 1] = v[0, 0] - dd
    rho[2, 2] = v[1, 1] - dd
    rho[1, 2] = v[0, 1]
    rho[2, 1] = v[1, 0]
    return ReducedState("fermi_fock", rho, n_levels=2)


def steady_state_rho(nbar, statistics, n_max: Optional[int] = None) -> ReducedState:
    """Gibbs-type state ``exp(sum ln[n/(I±n)]_ij a_i^dagger a_j) / det(I±n)^±1``.

    Bosons: single mode, materialized on ``0..n_max`` (default from
    :func:`truncation_size`). Fermions: ``2^N`` Fock matrix; occupations
    exactly 0 or 1 take the pure-limit branch without logarithms.
    """
    stats = Statistics(statistics)
    n = np.atleast_2d(np.asarray(nbar, dtype=complex))
    if stats is Statistics.BOSE:
        if n.shape != (1, 1):
            raise ConfigurationError("bosonic Gibbs state materialized for one mode only")
        nb = float(n[0, 0].real)
        if nb < 0:
            raise ConfigurationError("bosonic occupation must be nonnegative")
        if n_max is None:
            n_max = truncation_size(nb)
        k = np.arange(n_max + 1)
        p = np.exp(xlogy(k, nb) - (k + 1) * np.log1p(nb))
        return ReducedState("boson_fock", np.diag(p))
    return gaussian_fermion_rho(n)


def occupation_matrix(gfs, n0) -> np.ndarray:
    """``n(t) = u n0 u^dagger + v`` along the grid."""
    return gfs.occupation(n0)


@dataclass(frozen=True)
class PropagatingCoefficients:
    """``w = (I ± v)^-1``, ``J1 = w u``, ``J2 = I - w``, ``J3 = I - u^dagger w u``
    per sample, arrays of shape (T, N, N)."""

    w: np.ndarray
    J1: np.ndarray
    J2: np.ndarray
    J3: np.ndarray


def propagating_coefficients(gfs) -> PropagatingCoefficients:
    """Coefficients of the exact solution's generating functional.

    Raises
    ------
    SolverError
        If ``I ± v`` is singular at some sample.
    """
    if gfs.v is None:
        raise ConfigurationError("correlation not computed")
    s = gfs.statistics.sign
    N = gfs.dimension
    I = np.eye(N)
    M = I[None] + s * gfs.v
    if np.min(np.abs(np.linalg.det(M))) < 1e-14:
        raise SolverError("I ± v is singular")
    w = np.linalg.inv(M)
    ud = np.conj(np.swapaxes(gfs.u, 1, 2))
    J1 = w @ gfs.u
    J2 = I[None] - w
    J3 = I[None] - ud @ w @ gfs.u
    return PropagatingCoefficients(w, J1, J2, J3)


def trace_distance(a, b) -> float:
    """``(1/2) || a - b ||_1`` for density matrices or population vectors."""
    ma = a.matrix if isinstance(a, ReducedState) else np.asarray(a)
    mb = b.matrix if isinstance(b, ReducedState) else np.asarray(b)
    d = ma - mb
    if d.ndim == 1:
        return 0.5 * float(np.sum(np.abs(d)))
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))
