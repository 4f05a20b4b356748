"""Renormalized thermodynamic quantities along the exact dynamics and in the
steady state."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.signal import savgol_filter
from scipy.special import xlogy

from . import spectral
from .greenfn import GreenFunctionSet, steady_occupation, steady_occupation_spectral
from .mastereq import CoefficientSeries, population_generator
from .model import ConfigurationError, NoThermalizationError, SolverError, Statistics, be_fd
from .states import BosonTrajectory, ReducedState

__all__ = [
    "be_fd",
    "internal_energy",
    "von_neumann_entropy",
    "gaussian_entropy",
    "population_entropy",
    "renorm_temperature_rate",
    "renorm_T_mu_fermion",
    "steady_temperature_boson",
    "time_derivative",
    "ThermoTrajectory",
    "boson_thermodynamics",
    "fermion_thermodynamics",
    "SteadyState",
    "steady_state_boson",
    "steady_state_fermion",
    "specific_heat_derivative",
    "specific_heat_partition",
    "specific_heat_sweep",
    "SpecificHeatSweep",
    "free_energy_partition",
    "low_temperature_exponent",
]

SDOT_GUARD = 1e-10
SG_WINDOW = 7
SG_ORDER = 6


def internal_energy(eps_r, n) -> np.ndarray:
    """``U = Tr[eps_r n]``; accepts single samples or (T, N, N) series."""
    e = np.asarray(eps_r)
    m = np.asarray(n)
    if e.ndim <= 1 and m.ndim <= 1:
        return np.real(np.sum(e * m, axis=-1))
    return np.real(np.einsum("...ij,...ji->...", e, m))


def population_entropy(p) -> np.ndarray:
    """``-sum p ln p`` over the last axis (``0 ln 0 = 0``)."""
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    return -np.sum(xlogy(p, p), axis=-1)


def gaussian_entropy(n, statistics, eigenvalues: bool = False) -> np.ndarray:
    """Entropy of a Gibbs-type state from its one-particle matrix.

    Bosons ``sum (1+l) ln(1+l) - l ln l``; fermions
    ``-sum l ln l + (1-l) ln(1-l)`` over eigenvalues ``l`` of `n`. With
    ``eigenvalues=True`` (or a 1-d input) the last axis already holds them.
    """
    stats = Statistics(statistics)
    m = np.asarray(n)
    lam = np.real(m) if (eigenvalues or m.ndim <= 1) else np.linalg.eigvalsh(m)
    if stats is Statistics.BOSE:
        lam = np.clip(lam, 0.0, None)
        return np.sum(xlogy(1 + lam, 1 + lam) - xlogy(lam, lam), axis=-1)
    lam = np.clip(lam, 0.0, 1.0)
    return -np.sum(xlogy(lam, lam) + xlogy(1 - lam, 1 - lam), axis=-1)


def von_neumann_entropy(state: ReducedState, statistics: Optional[Statistics] = None) -> float:
    """``-Tr rho ln rho`` of a reduced state."""
    if state.kind == "fermi_gaussian":
        return float(gaussian_entropy(state.matrix, Statistics.FERMI))
    lam = np.linalg.eigvalsh(state.matrix)
    return float(population_entropy(lam))


def renorm_temperature_rate(Qdot, Sdot, guard: float = SDOT_GUARD):
    """``T_r = Qdot / Sdot``; NaN where ``|Sdot| < guard``."""
    Q = np.asarray(Qdot, dtype=float)
    S = np.asarray(Sdot, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(np.abs(S) >= guard, Q / np.where(S == 0, 1.0, S), np.nan)


def _invert_fermi(eps_r, n):
    e = np.asarray(eps_r, dtype=float)
    m = np.asarray(n, dtype=float)
    if e.shape[-1] != 2 or m.shape[-1] != 2:
        raise ConfigurationError("temperature/chemical-potential inversion needs two levels")
    de = e[..., 0] - e[..., 1]
    if np.any(de == 0):
        raise ConfigurationError("inversion underdetermined: degenerate renormalized levels")
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = np.all((m > 0) & (m < 1), axis=-1) & np.isfinite(de)
        L = np.log1p(-m) - np.log(m)
        dL = L[..., 0] - L[..., 1]
        infinite = ok & (dL == 0)
        ok &= dL != 0
        T = np.where(ok, de / np.where(ok, dL, 1.0), np.nan)
        T = np.where(infinite, np.inf, T)
        mu = np.where(ok, e[..., 0] - T * L[..., 0], np.nan)
    return T, mu, infinite


def renorm_T_mu_fermion(eps_r, n):
    """Invert ``n_s = f(eps_s, T, mu)`` for two levels.

    With ``L_s = ln[(1 - n_s)/n_s] = (eps_s - mu)/T``,
    ``T = (eps_1 - eps_2)/(L_1 - L_2)`` and ``mu = eps_1 - T L_1``.
    Works on a trailing axis of length 2. Entries outside ``0 < n < 1`` are
    NaN; equal occupations give ``T = inf`` (``beta_r = 0``) and ``mu``
    NaN.

    Raises
    ------
    ConfigurationError
        Degenerate levels leave the inversion underdetermined.
    """
    T, mu, _ = _invert_fermi(eps_r, n)
    return T, mu


def steady_temperature_boson(omega_r, nbar):
    """``T_r = omega_r / ln(1 + 1/n)`` (inverse of the Bose-Einstein law)."""
    return np.asarray(omega_r) / np.log1p(1.0 / np.asarray(nbar))


def time_derivative(x, dt: float) -> np.ndarray:
    """Sixth-order Savitzky-Golay derivative (window 7, polyorder 6, exact
    polynomial interpolation) along axis 0; NaN spreads over its window."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < SG_WINDOW:
        return np.gradient(x, dt, axis=0)
    bad = ~np.isfinite(x)
    y = savgol_filter(np.where(bad, 0.0, x), SG_WINDOW, SG_ORDER, deriv=1, delta=dt, axis=0, mode="interp")
    if np.any(bad):
        rows = bad.reshape(bad.shape[0], -1).any(axis=1)
        spread = np.convolve(rows.astype(float), np.ones(SG_WINDOW), "same") > 0
        # the one-sided edge fits use the first and last windows
        spread[:SG_WINDOW] |= rows[:SG_WINDOW].any()
        spread[-SG_WINDOW:] |= rows[-SG_WINDOW:].any()
        y[spread] = np.nan
    return y


@dataclass(frozen=True)
class ThermoTrajectory:
    """Thermodynamic series on the time grid.

    ``W`` and ``Q`` accumulate midpoint increments ``nbar_mid d eps_r`` and
    ``eps_r,mid d nbar`` so that ``U(t) - U(0) = W + Q`` holds to rounding.
    Rates use the analytic ``ndot`` and a sixth-order derivative of
    ``eps_r``. ``T_r`` (and ``mu_r`` for fermions) are NaN where undefined.
    """

    t: np.ndarray
    statistics: Statistics
    eps_r: np.ndarray
    nbar: np.ndarray
    U: np.ndarray
    S: np.ndarray
    N: np.ndarray
    T_r: np.ndarray
    mu_r: np.ndarray
    F: np.ndarray
    dW_dt: np.ndarray
    dQ_dt: np.ndarray
    dS_dt: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    dt: float
    extra: dict = field(default_factory=dict)

    @property
    def defined(self) -> np.ndarray:
        cols = [self.U, self.S, self.T_r, self.F, self.dW_dt, self.dQ_dt]  # inf T_r is flagged, not defined
        return np.all([np.isfinite(c) for c in cols], axis=0)

    def first_law_residual(self, floor: float = 1e-6) -> dict:
        """Pointwise ``dU/dt - (dW/dt + dQ/dt)`` and the cumulative form.

        ``scale`` is ``max(|dU/dt| + sum_i |eps_i ndot_i| + sum_i |epsdot_i
        n_i|, floor)``: per-level magnitudes, so that cancellations between
        levels or between work and heat do not make the relative residual
        meaningless where ``dU/dt`` crosses zero. `floor` is in energy per
        time (pass ``1e-6 omega_s``).
        """
        dU = time_derivative(self.U, self.dt)
        res = dU - (self.dW_dt + self.dQ_dt)
        scale = np.maximum(np.abs(dU) + self.extra["level_rate_scale"], floor)
        cum = self.U - self.U[0] - (self.W + self.Q)
        return {"rate": res, "scale": scale, "cumulative": cum,
                "cumulative_scale": np.abs(self.U - self.U[0]) + np.abs(self.W) + np.abs(self.Q)}

    def legendre_residual(self, floor: float = 1e-6) -> dict:
        """Pointwise ``dF/dt - (dW/dt - S dT_r/dt [+ mu_r dN/dt])``.

        ``dF/dt`` is a numerical derivative of the ``F`` series. ``dT_r/dt``
        is numerical for bosons (``T_r`` is a rate ratio) and follows from
        the chain rule on the inversion formulas for fermions, where ``T_r``
        varies like ``1/ln t`` just after an empty start. ``scale`` sums the
        magnitudes of ``dF/dt``, of the per-level work and heat rates (``F``
        changes through ``dU`` and ``T_r dS``) and of ``S dT_r/dt``.
        """
        dF = time_derivative(self.F, self.dt)
        dT = self.extra.get("dT_dt")
        if dT is None:
            dT = time_derivative(self.T_r, self.dt)
        rhs = self.dW_dt - self.S * dT
        scale = np.abs(dF) + self.extra["level_rate_scale"] + np.abs(self.S * dT)
        if self.statistics is Statistics.FERMI:
            mdn = self.mu_r[:, None] * self.extra["ndot"]
            rhs = rhs + mdn.sum(axis=1)
            scale = scale + np.abs(mdn).sum(axis=1)
        return {"rate": dF - rhs, "scale": np.maximum(scale, floor)}

    def as_columns(self) -> dict:
        cols = {"t": self.t, "U": self.U, "S": self.S, "N": self.N, "T_r": self.T_r}
        if self.statistics is Statistics.FERMI:
            cols["mu_r"] = self.mu_r
        cols.update({"F": self.F, "dW_dt": self.dW_dt, "dQ_dt": self.dQ_dt, "dS_dt": self.dS_dt,
                     "W": self.W, "Q": self.Q})
        return cols


def _cumulative_work_heat(eps, n):
    """Midpoint increments of work and heat summed over levels."""
    de = np.diff(eps, axis=0)
    dn = np.diff(n, axis=0)
    em = 0.5 * (eps[1:] + eps[:-1])
    nm = 0.5 * (n[1:] + n[:-1])
    dW = np.sum(nm * de, axis=-1)
    dQ = np.sum(em * dn, axis=-1)
    W = np.concatenate([[0.0], np.cumsum(dW)])
    Q = np.concatenate([[0.0], np.cumsum(dQ)])
    return W, Q


def _derivative_off_poles(T: np.ndarray, Sdot: np.ndarray, dt: float) -> np.ndarray:
    """``dT_r/dt`` with samples whose stencil straddles a sign change of
    ``Sdot`` (a pole of ``T_r = Qdot / Sdot``) set to NaN."""
    dT = time_derivative(T, dt)
    sd = np.where(np.isfinite(Sdot), Sdot, 0.0)
    flip = np.zeros(sd.size, dtype=bool)
    cross = sd[:-1] * sd[1:] < 0
    flip[:-1] |= cross
    flip[1:] |= cross
    if flip.any():
        near = np.convolve(flip.astype(float), np.ones(SG_WINDOW), "same") > 0
        dT[near] = np.nan
    return dT


def _population_entropy_rate(p: np.ndarray, g, gt) -> np.ndarray:
    """``-sum_n pdot_n ln p_n`` summed over links of the birth-death chain.

    With ``J_n = (n+1) [(2g + gt) p_{n+1} - gt p_n]`` the rate is
    ``sum_n J_n (ln p_{n+1} - ln p_n)``. Each ``J_n`` vanishes at equilibrium,
    so this avoids the cancellation of the level-by-level sum. Empty levels
    carry ``ln p = 0`` as in the entropy itself.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    n1 = np.arange(1, p.shape[1], dtype=float)
    J = n1 * ((2 * g + gt)[:, None] * p[:, 1:] - gt[:, None] * p[:, :-1])
    return np.sum(J * (lp[:, 1:] - lp[:, :-1]), axis=1)


def boson_thermodynamics(gfs: GreenFunctionSet, co: CoefficientSeries, traj: BosonTrajectory,
                         n0: float) -> ThermoTrajectory:
    """Single-mode bosonic thermodynamics from the exact solution.

    Parameters
    ----------
    gfs : GreenFunctionSet
    co : CoefficientSeries
    traj : BosonTrajectory
        Closed-form states on the full grid (populations or matrices).
    n0 : float
        Initial mean occupation.

    Notes
    -----
    ``Sdot = -sum_n pdot_n ln p_n`` uses the generator populations rate, and
    ``Qdot = omega_r ndot``. For states with coherences the entropy and its
    rate come from the eigenvalues of the full matrices.
    """
    if gfs.dimension != 1:
        raise ConfigurationError("bosonic thermodynamics is single mode")
    if traj.times.size != gfs.grid.n_steps + 1:
        raise ConfigurationError("trajectory must cover every grid sample")
    dt = gfs.grid.dt
    w = co.omega_r[:, 0]
    g = np.real(co.gamma[:, 0, 0])
    gt = np.real(co.gamma_tilde[:, 0, 0])
    n = np.real(gfs.occupation([[n0]])[:, 0, 0])
    ndot = np.real(gfs.occupation_rate([[n0]])[:, 0, 0])
    U = w * n
    if traj.populations is not None:
        p = traj.populations
        # one empty level above the cutoff keeps the flux leaving n_max
        p = np.pad(p, ((0, 0), (0, 1)))
        pdot = population_generator(p, g, gt)
        S = population_entropy(p)
        Sdot = _population_entropy_rate(p, g, gt)
        Hr_rho_dot = w * (pdot @ np.arange(p.shape[1]))
    else:
        from .mastereq import generator

        S = np.empty(traj.times.size)
        Sdot = np.empty_like(S)
        Hr_rho_dot = np.empty_like(S)
        nn = np.arange(traj.n_max + 2)
        for k, rho in enumerate(traj.matrices):
            rho = np.pad(rho, ((0, 1), (0, 1)))
            lam, vec = np.linalg.eigh(rho)
            lam = np.clip(lam, 0.0, None)
            S[k] = population_entropy(lam)
            rd = generator(rho, w[k], g[k], gt[k], Statistics.BOSE)
            # d/dt Tr rho ln rho = Tr[rho_dot ln rho]
            lnr = (vec * np.where(lam > 0, np.log(np.where(lam > 0, lam, 1.0)), 0.0)) @ vec.conj().T
            Sdot[k] = -np.real(np.trace(rd @ lnr))
            Hr_rho_dot[k] = w[k] * np.real(np.sum(np.diag(rd) * nn))
    Sdot = np.where(co.defined, Sdot, np.nan)
    Qdot = w * ndot
    wdot = time_derivative(w, dt)
    Wdot = wdot * n
    T = renorm_temperature_rate(Qdot, Sdot)
    dT = _derivative_off_poles(T, Sdot, dt)
    # dS/dt vanishing on every sample: an isolated system already in equilibrium
    stalled = bool(co.defined.any() and not np.isfinite(T).any())
    F = U - T * S
    W, Q = _cumulative_work_heat(w[:, None], n[:, None])
    return ThermoTrajectory(
        t=gfs.times, statistics=Statistics.BOSE, eps_r=w, nbar=n, U=U, S=S, N=n, T_r=T,
        mu_r=np.zeros_like(T), F=F, dW_dt=Wdot, dQ_dt=Qdot, dS_dt=Sdot, W=W, Q=Q, dt=dt,
        extra={"gamma": g, "gamma_tilde": gt, "dQ_dt_decomposition": w * (-2 * g * n + gt),
               "Tr_Hr_rho_dot": Hr_rho_dot, "ndot": ndot, "equilibrium_reached": stalled, "dT_dt": dT,
               "level_rate_scale": np.abs(Qdot) + np.abs(Wdot)},
    )


def fermion_thermodynamics(gfs: GreenFunctionSet, co: CoefficientSeries, n0=None) -> ThermoTrajectory:
    """Two-level fermionic (dot) thermodynamics from the Gibbs-type state.

    ``T_r`` and ``mu_r`` come from inverting the Fermi-Dirac law on both
    levels, so ``T_r Sdot = Qdot - mu_r Ndot`` holds identically.
    """
    N = gfs.dimension
    if N != 2:
        raise ConfigurationError("fermionic thermodynamics is implemented for two levels")
    if not np.allclose(gfs.epsilon, np.diag(np.diag(gfs.epsilon))):
        raise ConfigurationError("fermionic thermodynamics needs diagonal levels")
    n0 = np.zeros((N, N)) if n0 is None else np.atleast_2d(np.asarray(n0, dtype=float))
    dt = gfs.grid.dt
    e = co.omega_r
    nm = gfs.occupation(n0)
    if np.max(np.abs(nm - np.einsum("tii->ti", nm)[:, :, None] * np.eye(N))) > 1e-12:
        raise ConfigurationError("fermionic thermodynamics needs a diagonal occupation matrix")
    n = np.real(np.einsum("tii->ti", nm))
    ndot = np.real(np.einsum("tii->ti", gfs.occupation_rate(n0)))
    U = np.sum(e * n, axis=1)
    Ntot = n.sum(axis=1)
    S = gaussian_entropy(n, Statistics.FERMI, eigenvalues=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.log1p(-n) - np.log(n)
        Sdot = np.sum(ndot * L, axis=1)
    T, mu, infinite = _invert_fermi(e, n)
    defined = co.defined & np.isfinite(T)
    T = np.where(defined, T, np.nan)
    mu = np.where(defined, mu, np.nan)
    Sdot = np.where(defined, Sdot, np.nan)
    Qdot = np.sum(e * ndot, axis=1)
    edot = time_derivative(e, dt)
    Wdot = np.sum(edot * n, axis=1)
    # chain rule on T = d eps / d L
    with np.errstate(divide="ignore", invalid="ignore"):
        Ldot = -ndot / (n * (1.0 - n))
        dT = ((edot[:, 0] - edot[:, 1]) - T * (Ldot[:, 0] - Ldot[:, 1])) / (L[:, 0] - L[:, 1])
    F = U - T * S
    W, Q = _cumulative_work_heat(e, n)
    return ThermoTrajectory(
        t=gfs.times, statistics=Statistics.FERMI, eps_r=e, nbar=n, U=U, S=S, N=Ntot, T_r=T,
        mu_r=mu, F=F, dW_dt=Wdot, dQ_dt=Qdot, dS_dt=Sdot, W=W, Q=Q, dt=dt,
        extra={"dN_dt": ndot.sum(axis=1), "ndot": ndot, "dT_dt": np.where(defined, dT, np.nan),
               "infinite_temperature": infinite & co.defined,
               "level_rate_scale": np.sum(np.abs(e * ndot) + np.abs(edot * n), axis=1)},
    )


# ---------------------------------------------------------------------------
# steady state


@dataclass(frozen=True)
class SteadyState:
    """Asymptotic renormalized quantities.

    ``thermalizes`` is False when a bound state keeps memory of the initial
    state; then ``nbar`` and the thermodynamic fields are NaN and
    ``omega_r`` is the bound-state frequency.
    """

    statistics: Statistics
    thermalizes: bool
    eps_r: np.ndarray
    gamma: np.ndarray
    nbar: np.ndarray
    T_r: float
    mu_r: float
    U: float
    S: float
    F: float
    bound_states: list = field(default_factory=list)

    def as_dict(self) -> dict:
        def clean(x):
            a = np.asarray(x, dtype=float)
            return [None if not math.isfinite(v) else float(v) for v in a.ravel()] if a.ndim else (
                None if not math.isfinite(float(a)) else float(a))

        return {
            "statistics": self.statistics.value,
            "thermalizes": self.thermalizes,
            "eps_r": clean(self.eps_r),
            "gamma": clean(self.gamma),
            "nbar": clean(self.nbar),
            "T_r": clean(self.T_r),
            "mu_r": clean(self.mu_r),
            "U": clean(self.U),
            "S": clean(self.S),
            "F": clean(self.F),
            "bound_states": [{"omega_b": b.omega_b, "Z": b.Z} for b in self.bound_states],
        }


def free_energy_partition(eps_r, T_r: float, mu_r: float, statistics) -> float:
    """``-T_r ln Z_r`` of the renormalized Gibbs state.

    Bosons: ``Z_r = prod 1/(1 - e^{-eps/T})``. Fermions use the grand
    partition sum, ``F = -T ln Z + mu N`` with
    ``ln Z = sum ln(1 + e^{-(eps - mu)/T})``, so that ``F = U - T S``.
    """
    e = np.atleast_1d(np.asarray(eps_r, dtype=float))
    if Statistics(statistics) is Statistics.BOSE:
        return float(T_r * np.sum(np.log1p(-np.exp(-e / T_r))))
    x = (e - mu_r) / T_r
    lnZ = np.sum(np.logaddexp(0.0, -x))
    N = np.sum(be_fd(e, T_r, mu_r, Statistics.FERMI))
    return float(-T_r * lnZ + mu_r * N)


def _pole_or_bound(sd, eps: float):
    bs = spectral.find_bound_states(sd, eps)
    if bs:
        top = max(bs, key=lambda b: b.Z)
        return top.omega_b, 0.0, bs
    z = spectral.resonance_pole(sd, eps)
    if z is None:
        raise SolverError("no resonance pole found (the density has no continued self-energy)")
    return z.real, -z.imag, []


def steady_state_boson(sd, omega_s: float, T0: float, mu0: float = 0.0) -> SteadyState:
    """Steady renormalized frequency, occupation and temperature of one mode.

    ``omega_r`` and ``gamma`` come from the dominant pole of the propagator
    (a bound state if present, else the resonance); ``nbar`` from the
    frequency-domain integral ``int D f``; ``T_r`` inverts the Bose-Einstein
    law at ``omega_r``.
    """
    w, g, bs = _pole_or_bound(sd, omega_s)
    if bs:
        nan = float("nan")
        return SteadyState(Statistics.BOSE, False, np.array([w]), np.array([g]), np.array([nan]),
                           nan, 0.0, nan, nan, nan, bs)
    nbar = steady_occupation_spectral(sd, omega_s, T0, mu0, Statistics.BOSE)
    T = float(steady_temperature_boson(w, nbar)) if nbar > 0 else 0.0
    U = w * nbar
    S = float(gaussian_entropy(np.array([nbar]), Statistics.BOSE))
    return SteadyState(Statistics.BOSE, True, np.array([w]), np.array([g]), np.array([nbar]),
                       T, 0.0, U, S, U - T * S, [])


def steady_state_fermion(system, reservoirs) -> SteadyState:
    """Steady state of a diagonal two-level dot coupled to several leads."""
    N = system.dimension
    eps = np.real(np.diag(system.epsilon))
    e_r = np.empty(N)
    g = np.empty(N)
    all_bs = []
    for i in range(N):
        weights = [float(np.real(r.coupling_matrix(N)[i, i])) for r in reservoirs]
        total = spectral.SumDensity([r.sd for r in reservoirs], weights)
        e_r[i], g[i], bs = _pole_or_bound(total, eps[i])
        all_bs += bs
    if all_bs:
        nan = float("nan")
        return SteadyState(Statistics.FERMI, False, e_r, g, np.full(N, nan), nan, nan, nan, nan, nan, all_bs)
    n = steady_occupation(system, reservoirs)
    T, mu = renorm_T_mu_fermion(e_r, n) if N == 2 else (float("nan"), float("nan"))
    U = float(np.sum(e_r * n))
    S = float(gaussian_entropy(n, Statistics.FERMI))
    return SteadyState(Statistics.FERMI, True, e_r, g, n, float(T), float(mu), U, S, U - float(T) * S, [])


# ---------------------------------------------------------------------------
# specific heat


def _steady_T_U(sd, omega_s: float, w: float, T0: float):
    nb = steady_occupation_spectral(sd, omega_s, T0)
    if not nb > 0:
        return 0.0, 0.0
    return float(steady_temperature_boson(w, nb)), w * nb


def specific_heat_derivative(sd, omega_s: float, T0_values: Sequence[float], rel_step: float = 1e-3):
    """Specific heat ``dU/dT_r`` at fixed ``omega_r`` by centered differences
    in ``T0`` around each sweep point.

    Returns
    -------
    T_r, C : ndarray
        Steady renormalized temperature and ``(dU/dT0)/(dT_r/dT0)``.
    """
    w, _, bs = _pole_or_bound(sd, omega_s)
    if bs:
        raise NoThermalizationError("bound state present: no steady temperature")
    T0 = np.asarray(T0_values, dtype=float)
    Tr = np.empty_like(T0)
    C = np.empty_like(T0)
    for k, t in enumerate(T0):
        h = rel_step * t
        (Tm, Um), (Tc, _), (Tp, Up) = (_steady_T_U(sd, omega_s, w, tt) for tt in (t - h, t, t + h))
        Tr[k] = Tc
        C[k] = (Up - Um) / (Tp - Tm)
    return Tr, C


@dataclass(frozen=True)
class SpecificHeatSweep:
    """Steady specific heat over a renormalized-temperature sweep."""

    omega_r: float
    T0: np.ndarray
    T_r: np.ndarray
    C_derivative: np.ndarray
    C_partition: np.ndarray
    error_estimate: np.ndarray
    low_T_exponent: float

    def as_columns(self) -> dict:
        return {"T0": self.T0, "T_r": self.T_r, "C_derivative": self.C_derivative,
                "C_partition": self.C_partition, "error_estimate": self.error_estimate}


def _T0_for(sd, omega_s, w, target):
    """``T0`` whose steady ``T_r`` equals `target` (monotone relation)."""
    def g(lt):
        return math.log(_steady_T_U(sd, omega_s, w, math.exp(lt))[0]) - math.log(target)

    lo = hi = math.log(target)
    while g(lo) > 0:
        lo -= 1.0
    while g(hi) < 0:
        hi += 1.0
    return math.exp(optimize.brentq(g, lo, hi, xtol=1e-12))


def specific_heat_sweep(sd, omega_s: float, T_r_min: float = 0.05, T_r_max: float = 30.0,
                        per_decade: int = 40, rel_step: float = 1e-3, tol: float = 1e-3,
                        T_low: Optional[float] = None) -> SpecificHeatSweep:
    """Both specific-heat routes over a geometric sweep in ``T0`` whose
    steady ``T_r`` spans ``[T_r_min, T_r_max]``.

    The derivative route differentiates locally (`rel_step`) at each sweep
    point; differencing between sweep points at 40 per decade would be far
    too coarse where ``omega_r / T_r`` is large. The truncation error of the
    local difference, ``rel_step^2 / 6`` times the relative third derivative
    of ``U`` in ``ln T0``, is estimated from the sweep itself.

    Warns
    -----
    RuntimeWarning
        When the estimated relative error exceeds `tol`.
    """
    w, _, bs = _pole_or_bound(sd, omega_s)
    if bs:
        raise NoThermalizationError("bound state present: no steady temperature")
    t_lo = _T0_for(sd, omega_s, w, T_r_min)
    t_hi = _T0_for(sd, omega_s, w, T_r_max)
    m = max(3, int(math.ceil(per_decade * math.log10(t_hi / t_lo))) + 1)
    T0 = np.geomspace(t_lo, t_hi, m)
    Tr, C = specific_heat_derivative(sd, omega_s, T0, rel_step)
    Cp = specific_heat_partition(w, Tr)
    # curvature of dU/dln T0 along the sweep
    lnT = np.log(T0)
    U_l = C * np.gradient(Tr, lnT)
    with np.errstate(divide="ignore", invalid="ignore"):
        curv = np.abs(np.gradient(np.gradient(U_l, lnT), lnT) / U_l)
    err = rel_step**2 / 6.0 * curv
    if np.nanmax(err) > tol:
        warnings.warn(f"specific-heat sweep error estimate {np.nanmax(err):.2e} exceeds {tol:g}",
                      RuntimeWarning)
    expo = low_temperature_exponent(Tr, C, T_low if T_low is not None else 10 * T_r_min)
    return SpecificHeatSweep(w, T0, Tr, C, Cp, err, expo)


def specific_heat_partition(omega_r: float, T_r) -> np.ndarray:
    """``C = x^2 e^x / (e^x - 1)^2`` with ``x = omega_r / T_r``."""
    x = omega_r / np.asarray(T_r, dtype=float)
    with np.errstate(over="ignore"):
        return np.where(x > 700, x * x * np.exp(-x), x * x * np.exp(x) / np.expm1(x) ** 2)


def low_temperature_exponent(T_r, C, T_max: float) -> float:
    """Slope of ``ln C`` against ``ln T_r`` for ``T_r <= T_max`` (reported,
    not asserted)."""
    T_r = np.asarray(T_r)
    C = np.asarray(C)
    m = (T_r <= T_max) & (C > 0)
    if m.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(T_r[m]), np.log(C[m]), 1)[0])
