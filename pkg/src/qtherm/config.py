"""Scenario configuration: strict YAML-backed models and their translation
into solver objects."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import spectral
from .model import ConfigurationError, ReservoirSpec, SystemSpec, TimeGrid

__all__ = [
    "ScenarioConfig",
    "FigureConfig",
    "load_scenario",
    "load_figure",
    "format_validation_error",
    "set_path",
    "build_scenario",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OhmicConfig(_Strict):
    kind: Literal["ohmic"]
    eta: float = Field(ge=0)
    omega_c: float = Field(gt=0)
    omega_max: Optional[float] = Field(default=None, gt=0)

    def build(self, base: Path):
        return spectral.Ohmic(self.eta, self.omega_c, self.omega_max)


class LorentzianConfig(_Strict):
    kind: Literal["lorentzian"]
    gamma: float = Field(ge=0)
    d: float = Field(gt=0)
    center: float = 0.0

    def build(self, base: Path):
        return spectral.Lorentzian(self.gamma, self.d, self.center)


class TabulatedConfig(_Strict):
    kind: Literal["tabulated"]
    file: str

    def build(self, base: Path):
        return spectral.load_tabulated(base / self.file)


SpectralConfig = Annotated[Union[OhmicConfig, LorentzianConfig, TabulatedConfig], Field(discriminator="kind")]


class ReservoirConfig(_Strict):
    spectral: SpectralConfig
    T0: float = Field(default=0.0, ge=0)
    mu0: float = 0.0
    coupling: Optional[list[list[float]]] = None


class InitialStateConfig(_Strict):
    """``fock`` (bosons, Fock index), ``empty`` or ``matrix`` (density
    matrix in a ``.npy`` or whitespace text file, bosons)."""

    kind: Literal["fock", "empty", "matrix"] = "empty"
    index: int = Field(default=0, ge=0)
    file: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "matrix" and not self.file:
            raise ValueError("matrix initial state needs 'file'")
        return self


class SystemConfig(_Strict):
    statistics: Literal["bose", "fermi"]
    levels: Union[list[float], list[list[float]]]
    initial: InitialStateConfig = InitialStateConfig()

    @model_validator(mode="after")
    def _check(self):
        if self.statistics == "fermi" and self.initial.kind != "empty":
            raise ValueError("fermionic systems start from the empty state")
        return self


class GridConfig(_Strict):
    dt: float = Field(gt=0)
    t_max: float = Field(gt=0)
    steady_tol: float = Field(default=1e-6, gt=0)
    method: Literal["auto", "time", "frequency"] = "auto"

    @model_validator(mode="after")
    def _check(self):
        if self.t_max < 4 * self.dt:
            raise ValueError("t_max must cover at least four steps")
        return self


class OutputsConfig(_Strict):
    series: list[Literal["green", "coeffs", "thermo"]] = ["green", "coeffs", "thermo"]
    directory: Optional[str] = None
    n_max: Optional[int] = Field(default=None, ge=2)
    master_equation: bool = False


class SweepConfig(_Strict):
    """Values written to one or more dotted config paths, each multiplied
    by `factor` (e.g. a coupling given in units of its critical value)."""

    parameter: Union[str, list[str]]
    factor: float = 1.0
    values: Optional[list[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    num: Optional[int] = Field(default=None, ge=1)
    scale: Literal["linear", "log"] = "linear"

    @model_validator(mode="after")
    def _check(self):
        ranged = (self.start, self.stop, self.num)
        if self.values is None and any(x is None for x in ranged):
            raise ValueError("sweep needs 'values' or 'start', 'stop' and 'num'")
        if self.values is not None and any(x is not None for x in ranged):
            raise ValueError("give either 'values' or a range, not both")
        if self.scale == "log" and self.values is None and not (self.start > 0 and self.stop > 0):
            raise ValueError("log sweep needs positive bounds")
        return self

    @property
    def paths(self) -> list[str]:
        return [self.parameter] if isinstance(self.parameter, str) else list(self.parameter)

    def points(self) -> list[float]:
        if self.values is not None:
            return list(self.values)
        f = np.geomspace if self.scale == "log" else np.linspace
        return [float(x) for x in f(self.start, self.stop, self.num)]


class SpecificHeatConfig(_Strict):
    T_r_min: float = Field(default=0.05, gt=0)
    T_r_max: float = Field(default=30.0, gt=0)
    per_decade: int = Field(default=40, ge=2)
    rel_step: float = Field(default=1e-3, gt=0, lt=0.1)


class ScenarioConfig(_Strict):
    name: str = "scenario"
    system: SystemConfig
    reservoirs: list[ReservoirConfig] = Field(min_length=1)
    grid: GridConfig
    outputs: OutputsConfig = OutputsConfig()
    sweep: Optional[SweepConfig] = None
    specific_heat: Optional[SpecificHeatConfig] = None

    @model_validator(mode="after")
    def _check(self):
        n = len(self.system.levels)
        for k, r in enumerate(self.reservoirs):
            if r.coupling is not None and (len(r.coupling) != n or any(len(row) != n for row in r.coupling)):
                raise ValueError(f"reservoirs.{k}.coupling must be {n}x{n}")
        return self


class RunConfig(_Strict):
    name: str
    mode: Literal["simulate", "sweep", "specific_heat"]
    scenario: ScenarioConfig


class FigureConfig(_Strict):
    figure: str
    description: str = ""
    templates: dict[str, Any] = {}  # YAML anchors only
    runs: list[RunConfig] = Field(min_length=1)


def format_validation_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"])
        lines.append(f"{path or '<root>'}: {e['msg']}")
    return "\n".join(lines)


def _read_yaml(path) -> Any:
    try:
        with open(path) as fh:
            return yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from exc


def _validate(cls, data, source):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: top level must be a mapping")
    try:
        return cls.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"{source}:\n{format_validation_error(exc)}") from exc


def load_scenario(path) -> ScenarioConfig:
    return _validate(ScenarioConfig, _read_yaml(path), path)


def load_figure(path) -> FigureConfig:
    return _validate(FigureConfig, _read_yaml(path), path)


def set_path(data: dict, path: str, value) -> dict:
    """Copy of `data` with the dotted `path` (list indices allowed) set."""
    out = copy.deepcopy(data)
    keys = path.split(".")
    node = out
    try:
        for k in keys[:-1]:
            node = node[int(k)] if isinstance(node, list) else node[k]
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            node[last] = value
    except (KeyError, IndexError, ValueError, TypeError) as exc:
        raise ConfigurationError(f"sweep parameter path '{path}' not found") from exc
    return out


def build_scenario(cfg: ScenarioConfig, base: Path = Path(".")):
    """Solver objects ``(system, reservoirs, grid, rho0)``.

    ``rho0`` is the bosonic initial Fock matrix or population vector, or
    ``None`` for an empty fermionic start.
    """
    levels = np.asarray(cfg.system.levels, dtype=float)
    system = SystemSpec(cfg.system.statistics, levels)
    res = []
    for r in cfg.reservoirs:
        c = None if r.coupling is None else np.asarray(r.coupling, dtype=float)
        res.append(ReservoirSpec(r.spectral.build(base), cfg.system.statistics, r.T0, r.mu0, c))
    grid = TimeGrid.from_horizon(cfg.grid.dt, cfg.grid.t_max)
    init = cfg.system.initial
    rho0 = None
    if cfg.system.statistics == "bose":
        if init.kind == "fock":
            rho0 = np.zeros(init.index + 1)
            rho0[init.index] = 1.0
        elif init.kind == "empty":
            rho0 = np.array([1.0])
        else:
            f = base / init.file
            try:
                rho0 = np.load(f) if f.suffix == ".npy" else np.loadtxt(f, dtype=complex)
            except (OSError, ValueError) as exc:
                raise ConfigurationError(f"system.initial.file: cannot read {f}: {exc}") from exc
            rho0 = np.atleast_2d(rho0)
            if rho0.shape[0] != rho0.shape[1] or not np.allclose(rho0, rho0.conj().T):
                raise ConfigurationError("system.initial.file: density matrix must be square Hermitian")
            if abs(np.trace(rho0) - 1) > 1e-10 or np.linalg.eigvalsh(rho0).min() < -1e-12:
                raise ConfigurationError("system.initial.file: density matrix must be PSD with unit trace")
    return system, res, grid, rho0
