"""Reservoir spectral densities, memory and noise kernels, self-energies,
spectral functions and localized bound states.

Conventions: ``hbar = k_B = 1``. The retarded self-energy on the real axis is
``Sigma(omega) = Delta(omega) - i pi J(omega)`` and the propagator has the
spectral representation ``u(t) = int D(omega) exp(-i omega t) d omega`` plus a
bound-state term when one exists.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize, special

from .model import ConfigurationError, ReservoirSpec, Statistics, be_fd

__all__ = [
    "SpectralDensity",
    "Ohmic",
    "Lorentzian",
    "Tabulated",
    "SumDensity",
    "BoundState",
    "SelfEnergyGrid",
    "evaluate_spectral_density",
    "memory_kernel",
    "integrated_kernel",
    "noise_kernel",
    "self_energy",
    "self_energy_grid",
    "self_energy_derivative",
    "spectral_function",
    "find_bound_state",
    "find_bound_states",
    "continuum_integral",
    "sum_rule",
    "resonance_pole",
    "load_tabulated",
]

QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-11
QUAD_LIMIT = 800


# ---------------------------------------------------------------------------
# special-function helpers


def _scaled_expi(x):
    """Return ``exp(-x) Ei(x)`` without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) <= 50.0
    with np.errstate(over="ignore", invalid="ignore"):
        out[small] = np.exp(-x[small]) * special.expi(x[small])
    xb = x[~small]
    if xb.size:
        # asymptotic series sum_k k!/x^(k+1), valid for |x| > 50 with 20 terms
        term = 1.0 / xb
        acc = term.copy()
        for k in range(1, 20):
            term = term * k / xb
            acc += term
        out[~small] = acc
    return out


def trigamma(z):
    """Complex trigamma function psi_1(z) for ``Re z > 0``.

    Uses the recurrence ``psi_1(z) = psi_1(z+1) + 1/z^2`` to shift into the
    asymptotic region ``Re z >= 20`` and then the Bernoulli expansion.
    """
    z = np.array(z, dtype=complex)
    if np.any(z.real <= 0):
        raise ValueError("trigamma implemented for Re z > 0 only")
    acc = np.zeros_like(z)
    shift = np.maximum(0, np.ceil(20.0 - z.real)).astype(int)
    for _ in range(int(shift.max(initial=0))):
        m = z.real < 20.0
        acc[m] += 1.0 / z[m] ** 2
        z[m] += 1.0
    iz = 1.0 / z
    iz2 = iz * iz
    series = iz * (
        1.0
        + iz / 2.0
        + iz2 * (1.0 / 6.0 + iz2 * (-1.0 / 30.0 + iz2 * (1.0 / 42.0 + iz2 * (-1.0 / 30.0 + iz2 * 5.0 / 66.0))))
    )
    out = acc + series
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# spectral densities


class SpectralDensity:
    """Base class for reservoir spectral densities ``J(omega) >= 0``.

    Subclasses provide the density itself and, where available, closed forms
    for kernels and level shifts. Every method has a generic quadrature
    fallback, so a subclass only needs ``_values``, ``support`` and ``window``.
    """

    kind = "generic"

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    @property
    def window(self) -> tuple[float, float]:
        """Finite frequency window used by quadratures."""
        raise NotImplementedError

    def _values(self, omega: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        lo, hi = self.support
        inside = (w >= lo) & (w <= hi)
        out = np.zeros_like(w)
        if np.any(inside):
            out[inside] = self._values(w[inside])
        return out[()] if out.ndim == 0 else out

    def value_at_edge(self, omega: float) -> float:
        return float(self(omega))

    @property
    def features(self) -> list[tuple[float, float]]:
        """``(position, width)`` pairs where the density varies quickly."""
        return []

    @property
    def algebraic_tail(self) -> Optional[tuple[float, float]]:
        """``(center, width)`` when ``J`` decays like ``1/omega^2`` on an
        unbounded support; such densities make thermal noise kernels
        non-smooth at zero lag."""
        return None

    # closed forms; ``None`` selects the generic route
    def _kernel_closed(self, t: np.ndarray) -> Optional[np.ndarray]:
        return None

    def _integrated_kernel_closed(self, t: np.ndarray) -> Optional[np.ndarray]:
        return None

    def _shift_closed(self, omega: np.ndarray) -> Optional[np.ndarray]:
        return None

    def _noise_closed(self, t, T0, mu0, statistics) -> Optional[np.ndarray]:
        return None

    def continued_self_energy(self, z: complex) -> Optional[complex]:
        """Self-energy continued from the upper half plane through the band
        into the lower half plane, or ``None`` if unavailable."""
        return None

    def mass(self) -> float:
        """``int J(omega) d omega``."""
        return float(np.real(memory_kernel(self, 0.0)))


@dataclass(frozen=True)
class Ohmic(SpectralDensity):
    """Ohmic density ``J = eta omega exp(-omega/omega_c)`` on ``[0, omega_max]``.

    Parameters
    ----------
    eta : float
        Dimensionless coupling.
    omega_c : float
        Exponential cutoff frequency.
    omega_max : float, optional
        Hard upper edge of the support. ``None`` means unbounded.
    """

    eta: float
    omega_c: float
    omega_max: Optional[float] = None
    kind = "ohmic"

    def __post_init__(self):
        if self.eta < 0 or not self.omega_c > 0:
            raise ConfigurationError("Ohmic density needs eta >= 0 and omega_c > 0")
        if self.omega_max is not None and not self.omega_max > 0:
            raise ConfigurationError("omega_max must be positive")

    @property
    def support(self):
        return (0.0, math.inf if self.omega_max is None else float(self.omega_max))

    @property
    def window(self):
        hi = 50.0 * self.omega_c if self.omega_max is None else float(self.omega_max)
        return (0.0, hi)

    @property
    def features(self):
        return [(0.0, self.omega_c / 50.0), (self.omega_c, self.omega_c)]

    def _values(self, omega):
        return self.eta * omega * np.exp(-omega / self.omega_c)

    def _a(self, t):
        return 1.0 / self.omega_c + 1j * np.asarray(t, dtype=float)

    def _kernel_closed(self, t):
        a = self._a(t)
        if self.omega_max is None:
            return self.eta / a**2
        aw = a * self.omega_max
        return self.eta * (1.0 - np.exp(-aw) * (1.0 + aw)) / a**2

    def _integrated_kernel_closed(self, t):
        t = np.asarray(t, dtype=float)
        c = self.omega_c
        if self.omega_max is None:
            return self.eta * c**2 * t / (1.0 + 1j * c * t)
        a = self._a(t)
        W = self.omega_max
        return -1j * self.eta * (c * (1.0 - np.exp(-W / c)) - (1.0 - np.exp(-a * W)) / a)

    def _shift_closed(self, omega):
        w = np.asarray(omega, dtype=float)
        c = self.omega_c
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(w == 0, 0.0, self.eta * w * _scaled_expi(w / c))
        if self.omega_max is None:
            return out - self.eta * c
        W = self.omega_max
        with np.errstate(divide="ignore", invalid="ignore"):
            edge = self.eta * w * math.exp(-W / c) * _scaled_expi((w - W) / c)
            out = out - np.where(w == W, np.inf, edge)
        return out - self.eta * c * (1.0 - math.exp(-W / c))

    def _noise_closed(self, t, T0, mu0, statistics):
        if statistics is not Statistics.BOSE or self.omega_max is not None or mu0 != 0.0:
            return None
        t = np.asarray(t, dtype=float)
        if T0 == 0:
            return np.zeros(t.shape, dtype=complex)
        z = 1.0 + T0 / self.omega_c + 1j * T0 * t
        return self.eta * T0**2 * trigamma(z)

    def continued_self_energy(self, z):
        c = self.omega_c
        z = complex(z)
        x = -z / c
        out = -self.eta * c - self.eta * z * np.exp(-z / c) * special.exp1(x)
        if z.imag < 0:
            # second sheet reached through the positive axis
            out -= 2j * math.pi * self.eta * z * np.exp(-z / c)
        if self.omega_max is not None:
            # minus the tail beyond the edge, analytic off [omega_max, inf)
            W = self.omega_max
            if z.imag == 0 and z.real >= W:
                return None
            out += self.eta * z * np.exp(-z / c) * special.exp1((W - z) / c) + self.eta * c * math.exp(-W / c)
        return out


@dataclass(frozen=True)
class Lorentzian(SpectralDensity):
    """Lorentzian density ``J = gamma d^2 / ((omega - center)^2 + d^2)``.

    Parameters
    ----------
    gamma : float
        Peak value (tunneling rate).
    d : float
        Half width.
    center : float
        Band center.
    """

    gamma: float
    d: float
    center: float = 0.0
    kind = "lorentzian"

    def __post_init__(self):
        if self.gamma < 0 or not self.d > 0:
            raise ConfigurationError("Lorentzian density needs gamma >= 0 and d > 0")

    @property
    def support(self):
        return (-math.inf, math.inf)

    @property
    def window(self):
        return (self.center - 50.0 * self.d, self.center + 50.0 * self.d)

    @property
    def features(self):
        return [(self.center, self.d)]

    @property
    def algebraic_tail(self):
        return (self.center, self.d)

    def _values(self, omega):
        x = omega - self.center
        return self.gamma * self.d**2 / (x * x + self.d**2)

    def _kernel_closed(self, t):
        t = np.asarray(t, dtype=float)
        return math.pi * self.gamma * self.d * np.exp(-self.d * np.abs(t) - 1j * self.center * t)

    def _integrated_kernel_closed(self, t):
        t = np.asarray(t, dtype=float)
        s = self.d + 1j * self.center
        pos = math.pi * self.gamma * self.d * (1.0 - np.exp(-s * np.abs(t))) / s
        return np.where(t >= 0, pos, -np.conj(pos))

    def _shift_closed(self, omega):
        x = np.asarray(omega, dtype=float) - self.center
        return math.pi * self.gamma * self.d * x / (x * x + self.d**2)

    def _noise_closed(self, t, T0, mu0, statistics):
        if statistics is not Statistics.FERMI or T0 <= 0:
            return None
        return _lorentz_fermi_noise(self, np.asarray(t, dtype=float), T0, mu0)

    def continued_self_energy(self, z):
        # analytic everywhere except the pole at center - i d
        return math.pi * self.gamma * self.d / (complex(z) - self.center + 1j * self.d)

    def mass(self):
        return math.pi * self.gamma * self.d


class Tabulated(SpectralDensity):
    """Piecewise-linear density through tabulated ``(omega, J)`` points.

    Evaluation outside the tabulated range through
    :func:`evaluate_spectral_density` raises; internally the density is zero
    there.
    """

    kind = "tabulated"

    def __init__(self, freqs: Sequence[float], values: Sequence[float]):
        f = np.array(freqs, dtype=float)
        v = np.array(values, dtype=float)
        if f.ndim != 1 or f.shape != v.shape or f.size < 2:
            raise ConfigurationError("tabulated density needs two equal-length columns")
        if np.any(np.diff(f) <= 0):
            raise ConfigurationError("tabulated frequencies must be strictly ascending")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ConfigurationError("tabulated values must be finite and nonnegative")
        f.flags.writeable = False
        v.flags.writeable = False
        self.freqs = f
        self.values = v

    def __repr__(self):
        return f"Tabulated(n={self.freqs.size}, range=[{self.freqs[0]}, {self.freqs[-1]}])"

    @property
    def support(self):
        return (float(self.freqs[0]), float(self.freqs[-1]))

    @property
    def window(self):
        return self.support

    @property
    def features(self):
        h = float(np.min(np.diff(self.freqs)))
        return [(float(x), h) for x in self.freqs]

    def _values(self, omega):
        return np.interp(omega, self.freqs, self.values)

    def _shift_closed(self, omega):
        # exact principal value of a piecewise-linear density
        w = np.atleast_1d(np.asarray(omega, dtype=float))
        xl, xr = self.freqs[:-1], self.freqs[1:]
        jl, jr = self.values[:-1], self.values[1:]
        beta = (jr - jl) / (xr - xl)
        alpha = jl - beta * xl
        dw = w[:, None]
        num = np.abs(dw - xl)
        den = np.abs(dw - xr)
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.log(num) - np.log(den)
            lin = alpha + beta * dw
            logterm = np.where(np.abs(lin) > 0, lin * logs, 0.0)
        out = np.sum(-beta * (xr - xl) + logterm, axis=1)
        return out.reshape(np.shape(omega))


class SumDensity(SpectralDensity):
    """Weighted sum ``sum_k c_k J_k`` of spectral densities."""

    kind = "sum"

    def __init__(self, parts: Sequence[SpectralDensity], weights: Optional[Sequence[float]] = None):
        self.parts = tuple(parts)
        self.weights = tuple(1.0 for _ in self.parts) if weights is None else tuple(map(float, weights))
        if not self.parts:
            raise ConfigurationError("empty spectral-density sum")

    def __repr__(self):
        return f"SumDensity({list(zip(self.weights, self.parts))})"

    @property
    def support(self):
        return (min(p.support[0] for p in self.parts), max(p.support[1] for p in self.parts))

    @property
    def window(self):
        return (min(p.window[0] for p in self.parts), max(p.window[1] for p in self.parts))

    @property
    def features(self):
        return [f for p in self.parts for f in p.features]

    @property
    def algebraic_tail(self):
        tails = [p.algebraic_tail for p in self.parts if p.algebraic_tail is not None]
        return tails[0] if tails else None

    def __call__(self, omega):
        return sum(c * p(omega) for c, p in zip(self.weights, self.parts))

    def _combine(self, name, *args):
        vals = [getattr(p, name)(*args) for p in self.parts]
        if any(v is None for v in vals):
            return None
        return sum(c * v for c, v in zip(self.weights, vals))

    def _kernel_closed(self, t):
        return self._combine("_kernel_closed", t)

    def _integrated_kernel_closed(self, t):
        return self._combine("_integrated_kernel_closed", t)

    def _shift_closed(self, omega):
        return self._combine("_shift_closed", omega)

    def continued_self_energy(self, z):
        return self._combine("continued_self_energy", z)


def load_tabulated(path) -> Tabulated:
    """Load a two-column CSV (frequency, J) with a header row."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ConfigurationError(f"{path}: expected two columns, found {data.shape[1]}")
    return Tabulated(data[:, 0], data[:, 1])


def evaluate_spectral_density(sd: SpectralDensity, omega):
    """Return ``J(omega)``; zero outside the support.

    Raises
    ------
    ConfigurationError
        For a tabulated density evaluated outside its grid.
    """
    if isinstance(sd, Tabulated):
        w = np.asarray(omega, dtype=float)
        lo, hi = sd.support
        if np.any((w < lo) | (w > hi)):
            raise ConfigurationError(f"frequency outside tabulated range [{lo}, {hi}]")
    return sd(omega)


# ---------------------------------------------------------------------------
# Fourier quadrature for kernels without closed forms


def _panels(lo: float, hi: float, width: float, features, order: int = 16):
    """Gauss-Legendre nodes and weights on ``[lo, hi]`` with panels no wider
    than `width` and geometric grading towards each feature."""
    edges = {lo, hi}
    span = hi - lo
    for pos, scale in features:
        if not (lo - span <= pos <= hi + span) or scale <= 0:
            continue
        s = scale / 8.0
        while s < span:
            for e in (pos - s, pos, pos + s):
                if lo < e < hi:
                    edges.add(e)
            s *= 2.0
    edges = np.array(sorted(edges))
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        m = max(1, int(math.ceil((b - a) / width)))
        e = np.linspace(a, b, m + 1)
        mid = 0.5 * (e[1:] + e[:-1])
        half = 0.5 * (e[1:] - e[:-1])
        nodes.append((mid[:, None] + half[:, None] * x).ravel())
        weights.append((half[:, None] * w).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def fourier_integral(func: Callable, lo: float, hi: float, t, features=(), transform=None) -> np.ndarray:
    """``int_lo^hi func(omega) K(omega, t) d omega`` for every ``t``.

    ``K = exp(-i omega t)`` by default; `transform` may supply another kernel
    ``K(omega, t)`` evaluated on an outer grid.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    tmax = float(np.max(np.abs(t))) if t.size else 0.0
    width = (hi - lo) / 4.0 if tmax == 0 else min((hi - lo) / 4.0, 8.0 / tmax)
    nodes, weights = _panels(lo, hi, width, features)
    if nodes.size > 400_000:
        warnings.warn(f"Fourier quadrature uses {nodes.size} nodes; consider a closed form", RuntimeWarning)
    fw = func(nodes) * weights
    out = np.empty(t.shape, dtype=complex)
    chunk = max(1, int(4_000_000 // max(nodes.size, 1)))
    for s in range(0, t.size, chunk):
        tt = t[s : s + chunk]
        if transform is None:
            k = np.exp(-1j * np.outer(tt, nodes))
        else:
            k = transform(nodes[None, :], tt[:, None])
        out[s : s + chunk] = k @ fw
    return out


def _generic_window(sd: SpectralDensity):
    lo, hi = sd.window
    slo, shi = sd.support
    if (math.isinf(slo) or math.isinf(shi)) and sd.kind != "ohmic":
        return lo, hi, True
    return lo, hi, False


def memory_kernel(sd: SpectralDensity, t):
    """Memory kernel ``g(t) = int J(omega) exp(-i omega t) d omega``.

    Closed forms are used for Ohmic and Lorentzian densities; otherwise a
    panel Gauss-Legendre Fourier quadrature over the density window.
    """
    ta = np.asarray(t, dtype=float)
    out = sd._kernel_closed(ta)
    if out is None:
        lo, hi, _ = _generic_window(sd)
        out = fourier_integral(sd, lo, hi, ta.ravel(), sd.features).reshape(ta.shape)
    out = np.asarray(out, dtype=complex)
    return out[()] if out.ndim == 0 else out


def _phase_integral(omega, t):
    # (1 - exp(-i omega t)) / (i omega), regular at omega = 0
    x = omega * t
    return t * np.exp(-0.5j * x) * np.sinc(x / (2.0 * math.pi))


def integrated_kernel(sd: SpectralDensity, t):
    """``G(t) = int_0^t g(s) ds``."""
    ta = np.asarray(t, dtype=float)
    out = sd._integrated_kernel_closed(ta)
    if out is None:
        lo, hi, _ = _generic_window(sd)
        out = fourier_integral(sd, lo, hi, ta.ravel(), sd.features, transform=_phase_integral).reshape(ta.shape)
    out = np.asarray(out, dtype=complex)
    return out[()] if out.ndim == 0 else out


def _weight(sd: SpectralDensity, T0: float, mu0: float, statistics: Statistics):
    stats = Statistics(statistics)

    def f(omega):
        j = sd(omega)
        if stats is Statistics.BOSE:
            x = omega - mu0
            if T0 == 0:
                return np.zeros_like(j)
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                occ = np.where(j > 0, 1.0 / np.expm1(x / T0), 0.0)
            return j * occ
        return j * be_fd(omega, T0, mu0, Statistics.FERMI)

    return f


def _lorentz_fermi_noise(sd: Lorentzian, t: np.ndarray, T: float, mu: float) -> np.ndarray:
    """Residue evaluation of ``int J f exp(-i omega t)`` for a Lorentzian lead."""
    shape = t.shape
    t = t.ravel()
    out = np.empty(t.size, dtype=complex)
    at = np.abs(t)
    zero = at == 0
    if np.any(zero):
        val = continuum_integral(sd, _weight(sd, T, mu, Statistics.FERMI), points=[mu])
        out[zero] = val
    pos = ~zero
    if np.any(pos):
        tp = at[pos]
        g, d, c = sd.gamma, sd.d, sd.center
        pole = c - 1j * d
        fpole = 1.0 / (np.exp((pole - mu) / T) + 1.0)
        acc = math.pi * g * d * fpole * np.exp(-1j * pole * tp)
        nterms = np.minimum(np.ceil(40.0 / (2 * math.pi * T * tp)) + 50, 200_000).astype(int)
        nmax = int(nterms.max())
        block = 2048
        for n0 in range(0, nmax, block):
            n = np.arange(n0, min(n0 + block, nmax))
            nu = math.pi * T * (2 * n + 1)
            z = mu - 1j * nu
            if np.any(np.abs(z - pole) < 1e-9 * max(1.0, d)):
                raise ConfigurationError("Matsubara frequency coincides with the Lorentzian pole")
            jz = g * d**2 / ((z - c) ** 2 + d**2)
            active = nterms > n0
            ta = tp[active]
            terms = np.exp(-np.outer(ta, nu)) * (n[None, :] < nterms[active][:, None])
            acc[active] += 2j * math.pi * T * np.exp(-1j * mu * ta) * (terms @ jz)
        out[pos] = np.where(t[pos] > 0, acc, np.conj(acc))
    return out.reshape(shape)


def noise_kernel(reservoir: ReservoirSpec, t):
    """Noise kernel ``int J(omega) f(omega, T0, mu0) exp(-i omega t) d omega``.

    Parameters
    ----------
    reservoir : ReservoirSpec
        Reservoir carrying the density, statistics, ``T0`` and ``mu0``.
    t : float or array_like
        Time lags.
    """
    sd = reservoir.sd
    stats = reservoir.statistics
    T0, mu0 = reservoir.T0, reservoir.mu0
    ta = np.asarray(t, dtype=float)
    if stats is Statistics.BOSE and T0 == 0:
        out = np.zeros(ta.shape, dtype=complex)
        return out[()] if out.ndim == 0 else out
    if stats is Statistics.BOSE:
        lo = sd.support[0]
        if mu0 > lo or (mu0 == lo and sd.value_at_edge(lo) > 0):
            raise ConfigurationError("Bose distribution diverges inside the spectral support")
    out = sd._noise_closed(ta, T0, mu0, stats)
    if out is None:
        lo, hi, trunc = _generic_window(sd)
        feats = list(sd.features) + [(mu0, max(T0, 1e-3))]
        if trunc:
            warnings.warn(
                "generic noise quadrature truncates an unbounded density to its window",
                RuntimeWarning,
            )
        out = fourier_integral(_weight(sd, T0, mu0, stats), lo, hi, ta.ravel(), feats).reshape(ta.shape)
    out = np.asarray(out, dtype=complex)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# frequency-domain quantities


def continuum_integral(sd: SpectralDensity, func: Callable, points: Sequence[float] = ()) -> float:
    """Adaptive quadrature of ``func`` over the support of `sd`.

    The finite window is split at `points` and the density features; any
    unbounded tails are added by quadrature on semi-infinite intervals.
    """
    slo, shi = sd.support
    lo, hi = sd.window
    cuts = sorted({lo, hi, *[p for p in points if lo < p < hi], *[f for f, _ in sd.features if lo < f < hi]})
    total = 0.0

    def scalar(x):
        return float(func(np.array([x]))[0])

    for a, b in zip(cuts[:-1], cuts[1:]):
        val, _ = integrate.quad(scalar, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
        total += val
    if math.isinf(slo):
        val, _ = integrate.quad(scalar, -math.inf, lo, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
        total += val
    if math.isinf(shi):
        val, _ = integrate.quad(scalar, hi, math.inf, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
        total += val
    return total


def _shift_generic(sd: SpectralDensity, omega: float) -> float:
    """Principal value ``P int J(x)/(omega - x) dx`` by singularity subtraction."""
    slo, shi = sd.support
    lo, hi = sd.window
    jw = float(sd(omega))
    inside = lo < omega < hi and jw > 0

    def integrand(x):
        if inside:
            return (sd(x) - jw) / (omega - x) if x != omega else 0.0
        return sd(x) / (omega - x)

    pts = [p for p in (omega,) if lo < p < hi]
    val = 0.0
    cuts = sorted({lo, hi, *pts, *[f for f, _ in sd.features if lo < f < hi]})
    for a, b in zip(cuts[:-1], cuts[1:]):
        v, _ = integrate.quad(integrand, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
        val += v
    if inside:
        val += jw * math.log(abs((omega - lo) / (hi - omega)))
    for a, b in ((-math.inf, lo), (hi, math.inf)):
        if (a == -math.inf and math.isinf(slo)) or (b == math.inf and math.isinf(shi)):
            v, _ = integrate.quad(lambda x: sd(x) / (omega - x), a, b, epsabs=QUAD_EPSABS, limit=QUAD_LIMIT)
            val += v
    return val


def self_energy(sd: SpectralDensity, omega):
    """Real level shift ``Delta(omega)`` and ``J(omega)``.

    ``Sigma(omega) = Delta(omega) - i pi J(omega)``. ``Delta`` is a principal
    value inside the support and an ordinary integral outside.

    Returns
    -------
    delta, j : float or ndarray
    """
    w = np.asarray(omega, dtype=float)
    delta = sd._shift_closed(w)
    if delta is None:
        delta = np.vectorize(lambda x: _shift_generic(sd, float(x)), otypes=[float])(w)
    delta = np.asarray(delta, dtype=float)
    j = np.asarray(sd(w), dtype=float)
    if delta.ndim == 0:
        return float(delta), float(j)
    return delta, j


def shift_quadrature(sd: SpectralDensity, omega: float) -> float:
    """Level shift by singularity-subtraction quadrature (no closed form)."""
    return _shift_generic(sd, float(omega))


@dataclass(frozen=True)
class SelfEnergyGrid:
    """Self-energy sampled on a frequency grid."""

    omega: np.ndarray
    delta: np.ndarray
    j: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return self.delta - 1j * math.pi * self.j


def self_energy_grid(sd: SpectralDensity, omega) -> SelfEnergyGrid:
    w = np.asarray(omega, dtype=float)
    d, j = self_energy(sd, w)
    return SelfEnergyGrid(w, np.atleast_1d(d), np.atleast_1d(j))


def self_energy_derivative(sd: SpectralDensity, omega: float) -> float:
    """``d Delta / d omega = -int J(x)/(omega - x)^2 dx`` off the support."""
    slo, shi = sd.support
    if slo < omega < shi and float(sd(omega)) > 0:
        raise ValueError("derivative only defined where J vanishes")
    val = continuum_integral(sd, lambda x: sd(x) / (omega - x) ** 2)
    return -val


def spectral_function(sd: SpectralDensity, omega_s: float, omega):
    """Continuum spectral function ``D = J / ((omega - omega_s - Delta)^2 + pi^2 J^2)``."""
    w = np.asarray(omega, dtype=float)
    delta, j = self_energy(sd, w)
    with np.errstate(invalid="ignore", divide="ignore"):
        den = (w - omega_s - delta) ** 2 + (math.pi * j) ** 2
        out = np.where(j > 0, j / den, 0.0)
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class BoundState:
    """Localized mode at ``omega_b`` with residue ``Z``."""

    omega_b: float
    Z: float
    residual: float


def _bound_in(sd, omega_s, a, b, tol):
    def y(w):
        return w - omega_s - self_energy(sd, w)[0]

    ya, yb = y(a), y(b)
    if not (np.isfinite(ya) and np.isfinite(yb)) or ya * yb > 0:
        return None
    root = optimize.brentq(y, a, b, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    res = abs(y(root))
    dd = self_energy_derivative(sd, root)
    return BoundState(omega_b=float(root), Z=float(1.0 / (1.0 - dd)), residual=float(res))


def find_bound_states(sd: SpectralDensity, omega_s: float, bracket: Optional[tuple[float, float]] = None,
                      tol: float = 1e-14) -> list[BoundState]:
    """All roots of ``omega - omega_s - Delta(omega)`` where ``J = 0``.

    Regions searched are below and above the support (when finite), or the
    user-declared `bracket`.
    """
    slo, shi = sd.support
    if bracket is not None:
        found = _bound_in(sd, omega_s, bracket[0], bracket[1], tol)
        return [found] if found else []
    states = []
    if math.isfinite(slo):
        y_edge = slo - omega_s - self_energy(sd, slo)[0]
        scale = abs(y_edge) if np.isfinite(y_edge) else 1.0
        if isinstance(sd, Ohmic):
            span = 10.0 * sd.eta * sd.omega_c
        else:
            span = max(abs(omega_s - slo), math.sqrt(max(sd.mass(), 0.0)), 1.0)
        if np.isfinite(y_edge) and abs(y_edge) < 1e-12 * max(1.0, abs(omega_s)):
            warnings.warn("marginal bound state: root sits on the band edge", RuntimeWarning)
        elif y_edge > 0 and span > 0:
            a = slo - span
            for _ in range(60):
                if a - omega_s - self_energy(sd, a)[0] < 0:
                    break
                a = slo - 2 * (slo - a)
            edge = slo if np.isfinite(y_edge) else np.nextafter(slo, -math.inf)
            found = _bound_in(sd, omega_s, a, edge, tol)
            if found:
                states.append(found)
    if math.isfinite(shi):
        y_edge = shi - omega_s - self_energy(sd, shi)[0]
        if y_edge < 0:
            span = max(abs(omega_s - shi), math.sqrt(max(sd.mass(), 0.0)), 1.0)
            b = shi + span
            for _ in range(60):
                if b - omega_s - self_energy(sd, b)[0] > 0:
                    break
                b = shi + 2 * (b - shi)
            edge = shi if np.isfinite(y_edge) else np.nextafter(shi, math.inf)
            found = _bound_in(sd, omega_s, edge, b, tol)
            if found:
                states.append(found)
    return states


def find_bound_state(sd: SpectralDensity, omega_s: float, bracket=None) -> Optional[BoundState]:
    """Localized bound state below the band (or in `bracket`), if any.

    Examples
    --------
    >>> bs = find_bound_state(Ohmic(eta=0.12, omega_c=10.0), 1.0)
    >>> bs.omega_b < 0
    True
    """
    states = find_bound_states(sd, omega_s, bracket)
    return states[0] if states else None


def _peak_points(sd: SpectralDensity, omega_s: float) -> list[float]:
    lo, hi = sd.window
    pts = [omega_s]
    d0 = self_energy(sd, omega_s)[0] if lo < omega_s < hi else 0.0
    pts.append(omega_s + d0)
    pole = resonance_pole(sd, omega_s)
    if pole is not None:
        w = max(abs(pole.imag), 1e-12)
        pts += [pole.real + k * w for k in (-10, -1, 0, 1, 10)]
    return [p for p in pts if lo < p < hi]


def continuum_weight(sd: SpectralDensity, omega_s: float, weight: Optional[Callable] = None) -> float:
    """``int D(omega) w(omega) d omega`` over the continuum."""

    def f(x):
        d = spectral_function(sd, omega_s, x)
        return d if weight is None else d * weight(x)

    return continuum_integral(sd, f, points=_peak_points(sd, omega_s))


def sum_rule(sd: SpectralDensity, omega_s: float) -> float:
    """``int D d omega + sum Z``, equal to one for a normalized propagator."""
    total = continuum_weight(sd, omega_s)
    for bs in find_bound_states(sd, omega_s):
        total += bs.Z
    return total


def resonance_pole(sd: SpectralDensity, omega_s: float) -> Optional[complex]:
    """Complex resonance ``z`` with ``z - omega_s - Sigma_II(z) = 0``.

    ``Re z`` is the long-time renormalized frequency and ``-Im z`` the decay
    rate of the dissipative part of the propagator. ``None`` when the
    continued self-energy is unavailable or the iteration fails.
    """
    if isinstance(sd, Lorentzian):
        c, dd = sd.center, sd.d
        a = omega_s - c + 1j * dd
        disc = np.sqrt(a * a + 4 * math.pi * sd.gamma * dd + 0j)
        roots = [0.5 * (omega_s + c - 1j * dd + s * disc) for s in (1, -1)]
        return max(roots, key=lambda z: z.imag)
    if sd.continued_self_energy(omega_s + 1j) is None:
        return None
    lo, hi = sd.window
    d0, j0 = self_energy(sd, omega_s) if lo < omega_s < hi else (0.0, 0.0)
    z0 = complex(omega_s + d0, -math.pi * j0)

    def f(z):
        return z - omega_s - sd.continued_self_energy(z)

    try:
        z = optimize.newton(f, z0, tol=1e-14, maxiter=200)
    except (RuntimeError, OverflowError):
        return None
    z = complex(z)
    if z.imag > 1e-12 or not np.isfinite(z) or abs(f(z)) > 1e-9 * max(1.0, abs(z)):
        return None
    return z
