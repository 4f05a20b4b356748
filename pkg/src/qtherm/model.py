"""Shared value types: particle statistics, occupation functions, grids and
scenario descriptors."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit


class Statistics(str, Enum):
    """Particle statistics of system and reservoir quanta."""

    BOSE = "bose"
    FERMI = "fermi"

    @property
    def sign(self) -> int:
        """+1 for bosons, -1 for fermions (the sign in ``I ± n``)."""
        return 1 if self is Statistics.BOSE else -1


class QthermError(Exception):
    """Base class for package errors."""


class ConfigurationError(QthermError, ValueError):
    """Physically or structurally invalid input."""


class SolverError(QthermError, RuntimeError):
    """Numerical failure of a solver (instability, non-convergence)."""


class NoThermalizationError(QthermError):
    """Raised when a steady state does not exist because of a bound state."""


def be_fd(eps, T: float, mu: float = 0.0, statistics: Statistics | str = Statistics.BOSE):
    """Bose-Einstein or Fermi-Dirac occupation ``1/(exp((eps-mu)/T) ∓ 1)``.

    Parameters
    ----------
    eps : float or array_like
        Single-particle energies.
    T : float
        Temperature (``k_B = 1``). ``T = 0`` gives the ground-state limit.
    mu : float
        Chemical potential.
    statistics : Statistics
        Particle statistics.

    Returns
    -------
    float or ndarray
        Occupation numbers with the same shape as `eps`.

    Raises
    ------
    ConfigurationError
        For bosons when any ``eps <= mu``.
    """
    stats = Statistics(statistics)
    x = np.asarray(eps, dtype=float) - mu
    if T < 0:
        raise ConfigurationError(f"temperature must be >= 0, got {T}")
    if stats is Statistics.BOSE:
        if np.any(x <= 0):
            raise ConfigurationError("Bose occupation requires eps > mu")
        if T == 0:
            out = np.zeros_like(x)
        else:
            with np.errstate(over="ignore"):
                out = 1.0 / np.expm1(x / T)
    else:
        if T == 0:
            out = np.where(x < 0, 1.0, np.where(x > 0, 0.0, 0.5))
        else:
            out = expit(-x / T)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid ``t_k = t0 + k dt`` for ``k = 0..n_steps``."""

    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1, got {self.n_steps}")

    @classmethod
    def from_horizon(cls, dt: float, t_max: float, t0: float = 0.0) -> "TimeGrid":
        return cls(dt=dt, n_steps=max(1, int(round(t_max / dt))), t0=t0)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def t_max(self) -> float:
        return self.t0 + self.dt * self.n_steps


@dataclass(frozen=True)
class SystemSpec:
    """Bare system levels ``H_S = sum_i eps_i a_i^dagger a_i``.

    ``levels`` may also be a full Hermitian matrix for inter-level hopping.
    """

    statistics: Statistics
    levels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "statistics", Statistics(self.statistics))
        lv = np.asarray(self.levels)
        if lv.ndim == 0:
            lv = lv.reshape(1)
        if lv.ndim == 1:
            lv = np.diag(lv.astype(complex))
        lv = np.array(lv, dtype=complex)
        if lv.shape[0] != lv.shape[1] or lv.shape[0] < 1:
            raise ConfigurationError("levels must be a vector or a square matrix")
        if not np.all(np.isfinite(lv)):
            raise ConfigurationError("levels must be finite")
        if not np.allclose(lv, lv.conj().T):
            raise ConfigurationError("level matrix must be Hermitian")
        lv.flags.writeable = False
        object.__setattr__(self, "levels", lv)

    @property
    def dimension(self) -> int:
        return self.levels.shape[0]

    @property
    def epsilon(self) -> np.ndarray:
        """Bare single-particle matrix."""
        return self.levels


@dataclass(frozen=True)
class ReservoirSpec:
    """A reservoir in a thermal initial state coupled to the system.

    The coupling matrix ``C`` weights the reservoir spectral density so that
    the kernel seen by the system is ``C_ij g(t)``. ``None`` couples every
    level with unit weight and no cross terms.
    """

    sd: object
    statistics: Statistics
    T0: float = 0.0
    mu0: float = 0.0
    coupling: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "statistics", Statistics(self.statistics))
        if self.T0 < 0:
            raise ConfigurationError(f"T0 must be >= 0, got {self.T0}")
        if self.coupling is not None:
            c = np.array(np.atleast_2d(self.coupling), dtype=complex)
            if c.shape[0] != c.shape[1] or not np.allclose(c, c.conj().T):
                raise ConfigurationError("coupling matrix must be square Hermitian")
            if np.linalg.eigvalsh(c).min() < -1e-12:
                raise ConfigurationError("coupling matrix must be positive semidefinite")
            c.flags.writeable = False
            object.__setattr__(self, "coupling", c)
        if self.statistics is Statistics.BOSE:
            lo = self.sd.support[0]
            if self.mu0 > lo or (self.mu0 == lo and self.sd.value_at_edge(lo) > 0):
                raise ConfigurationError(
                    "bosonic reservoir needs mu0 below the spectral support"
                )

    def coupling_matrix(self, n: int) -> np.ndarray:
        if self.coupling is None:
            return np.eye(n, dtype=complex)
        if self.coupling.shape != (n, n):
            raise ConfigurationError(
                f"coupling matrix shape {self.coupling.shape} does not match {n} levels"
            )
        return self.coupling


def check_statistics(system: SystemSpec, reservoirs: Sequence[ReservoirSpec]) -> None:
    for k, r in enumerate(reservoirs):
        if r.statistics is not system.statistics:
            raise ConfigurationError(
                f"reservoirs[{k}] statistics {r.statistics.value} "
                f"!= system statistics {system.statistics.value}"
            )
