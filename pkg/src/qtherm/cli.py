"""Command-line scenario runner.

Subcommands: ``simulate``, ``sweep``, ``boundstate``, ``oracle-check`` and
``figure``. Exit codes: 0 success (non-thermalization is a physical
outcome, reported in the summary), 1 configuration error, 2 solver error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import greenfn, mastereq, oracle, spectral, states, thermo
from .config import (
    FigureConfig,
    ScenarioConfig,
    SpecificHeatConfig,
    build_scenario,
    load_figure,
    load_scenario,
    set_path,
)
from .model import ConfigurationError, NoThermalizationError, SolverError, Statistics, be_fd

UNITS = ("# units: hbar = k_B = 1; energies, temperatures and chemical potentials in units of "
         "the first bare level; times in its inverse; entropy dimensionless")
FLOAT_FMT = "%.12e"
FIGURES = ("1", "2", "3", "4c", "56", "7")
# The entropy rate weights the probability flux through the Fock cutoff by
# n |ln p|, so thermodynamic runs use a deeper thermal tail than the state
# reconstruction alone would need.
THERMO_TAIL = 1e-14


# ---------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return FLOAT_FMT % x


def write_table(path: Path, columns: dict, fmt: str = "csv") -> Path:
    """Write equal-length columns as CSV (units comment, header, fixed
    formatting) or as a JSON object of lists."""
    names = list(columns)
    data = [np.asarray(columns[k]) for k in names]
    n = len(data[0]) if data else 0
    if fmt == "json":
        path = path.with_suffix(".json")
        obj = {"units": UNITS[2:], "columns": {k: [_json_value(v) for v in d] for k, d in zip(names, data)}}
        path.write_text(json.dumps(obj, indent=1) + "\n")
        return path
    path = path.with_suffix(".csv")
    with open(path, "w") as fh:
        fh.write(UNITS + "\n")
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(_fmt(d[i]) for d in data) + "\n")
    return path


def _json_value(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, str):
        return x
    x = float(x)
    return x if math.isfinite(x) else None


def _clean(obj):
    """JSON-safe copy: NaN and inf become None, arrays become lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path


def _matrix_columns(prefix: str, series: np.ndarray, real: bool = False) -> dict:
    cols = {}
    N = series.shape[1]
    for i in range(N):
        for j in range(N):
            tag = f"{prefix}_{i}{j}" if N > 1 else prefix
            if real or (i == j and np.allclose(series[:, i, j].imag, 0.0)):
                cols[tag] = np.real(series[:, i, j])
            else:
                cols[f"{tag}_re"] = np.real(series[:, i, j])
                cols[f"{tag}_im"] = np.imag(series[:, i, j])
    return cols


def _workers() -> int:
    env = os.environ.get("QTHERM_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"QTHERM_THREADS must be an integer, got {env!r}")
    return cap


def _map(func, items):
    """Ordered map over a bounded process pool (serial for one worker)."""
    items = list(items)
    n = min(_workers(), len(items))
    if n <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# steady-state summaries


def _bare_reference(system, reservoirs) -> np.ndarray:
    """Occupation the bare levels would have in contact with the initial
    reservoir distributions (lead average for several reservoirs)."""
    eps = np.real(np.diag(system.epsilon))
    vals = []
    for r in reservoirs:
        if r.statistics is Statistics.BOSE and r.T0 == 0:
            vals.append(np.zeros_like(eps))
        else:
            vals.append(be_fd(eps, r.T0, r.mu0, r.statistics))
    return np.mean(vals, axis=0)


def steady_summary(system, reservoirs) -> dict:
    """Steady renormalized quantities, bound-state report and consistency
    checks for a scenario."""
    stats = system.statistics
    N = system.dimension
    out: dict = {"statistics": stats.value}
    if stats is Statistics.BOSE:
        if N != 1 or len(reservoirs) != 1:
            return {**out, "available": False, "reason": "steady state implemented for one mode and one bath"}
    elif not np.allclose(system.epsilon, np.diag(np.diag(system.epsilon))):
        return {**out, "available": False, "reason": "steady state implemented for diagonal levels"}
    try:
        if stats is Statistics.BOSE:
            r = reservoirs[0]
            ss = thermo.steady_state_boson(r.sd, float(system.epsilon[0, 0].real), r.T0, r.mu0)
        else:
            ss = thermo.steady_state_fermion(system, reservoirs)
    except SolverError as exc:
        # e.g. tabulated densities have no continued self-energy
        return {**out, "available": False, "reason": str(exc)}
    out.update(ss.as_dict())
    out["available"] = True
    bare = _bare_reference(system, reservoirs)
    out["nbar_bare"] = bare
    if ss.thermalizes:
        out["nbar_minus_bare"] = np.asarray(ss.nbar) - bare
        if np.isfinite(ss.T_r) and ss.T_r > 0:
            fd = be_fd(ss.eps_r, ss.T_r, ss.mu_r, stats)
            out["distribution_residual"] = float(np.max(np.abs(np.asarray(ss.nbar) - fd)))
            out["F_partition"] = thermo.free_energy_partition(ss.eps_r, ss.T_r, ss.mu_r, stats)
    return out


# ---------------------------------------------------------------------------
# simulate


def _apply_overrides(cfg: ScenarioConfig, dt: Optional[float], tmax: Optional[float]) -> ScenarioConfig:
    if dt is None and tmax is None:
        return cfg
    data = cfg.model_dump()
    if dt is not None:
        data["grid"]["dt"] = dt
    if tmax is not None:
        data["grid"]["t_max"] = tmax
    try:
        return ScenarioConfig.model_validate(data)
    except Exception as exc:  # pydantic ValidationError
        raise ConfigurationError(str(exc)) from exc


def _max_rel(res: dict, mask: np.ndarray) -> Optional[float]:
    x = res["rate"]
    m = mask & np.isfinite(x) & np.isfinite(res["scale"])
    if not m.any():
        return None
    return float(np.max(np.abs(x[m]) / res["scale"][m]))


def run_simulate(cfg: ScenarioConfig, out_dir: Path, fmt: str = "csv", base: Path = Path(".")) -> dict:
    """Full pipeline for one scenario; writes the series and summary.json.

    Returns the summary dictionary (with a private ``_final`` entry holding
    the last reduced state for figure post-processing).
    """
    system, res, grid, rho0 = build_scenario(cfg, base)
    out_dir.mkdir(parents=True, exist_ok=True)
    gfs = greenfn.solve(system, res, grid, method=cfg.grid.method)
    co = mastereq.coefficients(gfs)
    t = gfs.times
    stats = system.statistics
    N = system.dimension
    summary: dict = {"name": cfg.name, "statistics": stats.value, "levels": N,
                     "grid": {"dt": grid.dt, "t_max": grid.t_max, "n_steps": grid.n_steps}}
    flags: dict = {"coefficient_coverage": float(co.defined.mean())}
    final_state = None
    th = None

    if stats is Statistics.BOSE and N == 1:
        r0 = np.asarray(rho0)
        if r0.ndim == 1:
            n0 = float(r0 @ np.arange(r0.size))
        else:
            n0 = float(np.real(np.trace(r0 @ np.diag(np.arange(r0.shape[0])))))
        nt = np.real(gfs.occupation([[n0]])[:, 0, 0])
        init_idx = (r0.size if r0.ndim == 1 else r0.shape[0]) - 1
        n_max = cfg.outputs.n_max or states.truncation_size(float(nt.max()), init_idx, tail=THERMO_TAIL)
        n_max = max(n_max, init_idx + 1)
        flags["n_max"] = n_max
        traj = states.closed_form_rho_boson(gfs, r0, n_max)
        flags["truncation_leakage"] = traj.leakage
        th = thermo.boson_thermodynamics(gfs, co, traj, n0)
        flags["equilibrium_reached"] = th.extra["equilibrium_reached"]
        dec = th.extra["dQ_dt_decomposition"] - th.extra["Tr_Hr_rho_dot"]
        m = np.isfinite(dec)
        summary["heat_rate_decomposition_max_abs"] = float(np.max(np.abs(dec[m]))) if m.any() else None
        final_state = traj.state(traj.times.size - 1)
        if cfg.outputs.master_equation:
            start = traj.populations[0] if traj.populations is not None else traj.matrices[0]
            me = mastereq.propagate_master_equation(co, start)
            dist = [states.trace_distance(traj.state(k).matrix, me.state(i).matrix)
                    for i, k in enumerate(me.indices)]
            summary["master_equation_max_trace_distance"] = float(max(dist))
    elif stats is Statistics.FERMI:
        n0 = np.zeros((N, N))
        diag = np.allclose(system.epsilon, np.diag(np.diag(system.epsilon)))
        if N == 2 and diag:
            th = thermo.fermion_thermodynamics(gfs, co)
            flags["infinite_temperature_samples"] = int(np.sum(th.extra["infinite_temperature"]))
        final_state = states.set_rho_fermion(gfs.v[-1])
        if cfg.outputs.master_equation:
            rho_e = np.zeros((2**N, 2**N))
            rho_e[0, 0] = 1.0
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                me = mastereq.propagate_master_equation(co, rho_e)
            dist = [states.trace_distance(states.set_rho_fermion(gfs.v[k]).matrix,
                                          me.state(i).matrix) for i, k in enumerate(me.indices)]
            summary["master_equation_max_trace_distance"] = float(max(dist))
            flags["master_equation_t_max"] = float(t[me.indices[-1]])
    else:
        flags["thermodynamics"] = "skipped: multi-mode bosonic states are not materialized"
        n0 = np.zeros((N, N))

    if th is not None:
        d = th.defined
        flags["thermo_coverage"] = float(d.mean())
        omega_ref = float(abs(np.real(system.epsilon[0, 0]))) or 1.0
        summary["first_law_max_relative"] = _max_rel(th.first_law_residual(1e-6 * omega_ref), d)
        summary["legendre_max_relative"] = _max_rel(th.legendre_residual(1e-6 * omega_ref), d)
        cum = th.first_law_residual()["cumulative"]
        summary["first_law_cumulative_max_abs"] = float(np.max(np.abs(cum)))
        summary["entropy_min"] = float(np.min(th.S))

    nocc = gfs.occupation(n0 if stats is Statistics.FERMI else [[n0]])
    idx = greenfn.detect_steady_state(t, np.real(np.einsum("tii->ti", nocc)), rtol=cfg.grid.steady_tol)
    flags["steady_reached_at"] = None if idx is None else float(t[idx])
    summary["final"] = {"nbar": np.real(np.einsum("ii->i", nocc[-1])),
                        "eps_r": co.omega_r[-1] if co.defined[-1] else None}
    try:
        summary["steady"] = steady_summary(system, res)
    except NoThermalizationError as exc:
        summary["steady"] = {"available": False, "reason": str(exc)}
    summary["flags"] = flags

    series = cfg.outputs.series
    if "green" in series:
        cols = {"t": t}
        cols.update(_matrix_columns("u", gfs.u))
        cols.update(_matrix_columns("v", gfs.v))
        write_table(out_dir / "green", cols, fmt)
    if "coeffs" in series:
        cols = {"t": t}
        cols.update(_matrix_columns("eps_r", co.eps_r, real=True))
        cols.update(_matrix_columns("gamma", co.gamma, real=True))
        cols.update(_matrix_columns("gamma_tilde", co.gamma_tilde, real=True))
        cols["defined"] = co.defined
        write_table(out_dir / "coeffs", cols, fmt)
    if "thermo" in series and th is not None:
        cols = th.as_columns()
        cols["defined"] = th.defined
        write_table(out_dir / "thermo", cols, fmt)
    write_json(out_dir / "summary.json", summary)
    summary["_final"] = final_state
    return summary


# ---------------------------------------------------------------------------
# sweep


def _sweep_row(job):
    data, paths, factor, value, base = job
    row: dict = {"value": value, "error": ""}
    try:
        for p in paths:
            data = set_path(data, p, value * factor)
        cfg = ScenarioConfig.model_validate(data)
        system, res, _, _ = build_scenario(cfg, Path(base))
        row["steady"] = _clean(steady_summary(system, res))
        if not row["steady"]["available"]:
            row["error"] = "unavailable: " + row["steady"]["reason"].replace(",", ";")
    except (ConfigurationError, SolverError, NoThermalizationError, ValueError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
    return row


def _sweep_columns(rows: list[dict], n_levels: int) -> dict:
    def get(r, key, i=None):
        s = r.get("steady") or {}
        v = s.get(key)
        if i is not None:
            v = v[i] if isinstance(v, list) and len(v) > i else None
        return np.nan if v is None else v

    cols: dict = {"value": [r["value"] for r in rows],
                  "thermalizes": [int(bool((r.get("steady") or {}).get("thermalizes", False))) for r in rows]}
    for i in range(n_levels):
        sfx = f"_{i}" if n_levels > 1 else ""
        for key in ("eps_r", "gamma", "nbar", "nbar_bare"):
            cols[key + sfx] = [get(r, key, i) for r in rows]
    for key in ("T_r", "mu_r", "U", "S", "F", "F_partition", "distribution_residual"):
        cols[key] = [get(r, key) for r in rows]
    cols["n_bound_states"] = [len((r.get("steady") or {}).get("bound_states") or []) for r in rows]
    cols["error"] = [r["error"] or "-" for r in rows]
    return cols


def run_sweep(cfg: ScenarioConfig, out_dir: Path, fmt: str = "csv", base: Path = Path(".")) -> dict:
    """One steady-state row per sweep value, computed concurrently and
    written in sweep order."""
    if cfg.sweep is None:
        raise ConfigurationError("sweep: section missing")
    out_dir.mkdir(parents=True, exist_ok=True)
    data = cfg.model_dump(exclude={"sweep"})
    jobs = [(data, cfg.sweep.paths, cfg.sweep.factor, v, str(base)) for v in cfg.sweep.points()]
    rows = _map(_sweep_row, jobs)
    write_table(out_dir / "sweep", _sweep_columns(rows, len(cfg.system.levels)), fmt)
    summary = {"name": cfg.name, "parameter": cfg.sweep.paths, "factor": cfg.sweep.factor,
               "rows": len(rows), "failed_rows": sum(1 for r in rows if r["error"])}
    write_json(out_dir / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# specific heat


def run_specific_heat(cfg: ScenarioConfig, out_dir: Path, fmt: str = "csv", base: Path = Path(".")) -> dict:
    system, res, _, _ = build_scenario(cfg, base)
    if system.statistics is not Statistics.BOSE or system.dimension != 1 or len(res) != 1:
        raise ConfigurationError("specific heat sweep needs one bosonic mode and one bath")
    sh = cfg.specific_heat or SpecificHeatConfig()
    out_dir.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        r = thermo.specific_heat_sweep(res[0].sd, float(system.epsilon[0, 0].real), sh.T_r_min, sh.T_r_max,
                                       sh.per_decade, sh.rel_step)
    cols = r.as_columns()
    cols["relative_difference"] = np.abs(r.C_derivative - r.C_partition) / np.abs(r.C_partition)
    write_table(out_dir / "specific_heat", cols, fmt)
    summary = {"name": cfg.name, "omega_r": r.omega_r, "points": int(r.T_r.size),
               "max_relative_difference": float(np.max(cols["relative_difference"])),
               "max_error_estimate": float(np.nanmax(r.error_estimate)),
               "low_T_exponent": r.low_T_exponent,
               "warnings": [str(w.message) for w in caught]}
    write_json(out_dir / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# bound-state scan and oracle check


def run_boundstate(cfg: ScenarioConfig, out_dir: Path, eta_min: float, eta_max: float, step: float,
                   fmt: str = "csv") -> dict:
    """Scan the Ohmic coupling of the first reservoir for a bound state and
    locate the existence threshold by bisection."""
    sp = cfg.reservoirs[0].spectral
    if sp.kind != "ohmic":
        raise ConfigurationError("reservoirs.0.spectral: bound-state scan needs an Ohmic density")
    if not (step > 0 and eta_max > eta_min >= 0):
        raise ConfigurationError("boundstate: need 0 <= eta-min < eta-max and step > 0")
    omega_s = float(np.real(np.asarray(cfg.system.levels, dtype=float).ravel()[0]))
    out_dir.mkdir(parents=True, exist_ok=True)
    m = int(round((eta_max - eta_min) / step))
    etas = eta_min + step * np.arange(m + 1)

    def probe(eta):
        bs = spectral.find_bound_states(spectral.Ohmic(float(eta), sp.omega_c, sp.omega_max), omega_s)
        return bs[0] if bs else None

    found = [probe(e) for e in etas]
    exists = np.array([b is not None for b in found])
    cols = {"eta": etas, "exists": exists,
            "omega_b": [b.omega_b if b else np.nan for b in found],
            "Z": [b.Z if b else np.nan for b in found],
            "residual": [b.residual if b else np.nan for b in found]}
    write_table(out_dir / "boundstate", cols, fmt)
    flips = np.nonzero(exists[1:] != exists[:-1])[0]
    threshold = None
    if flips.size:
        a, b = float(etas[flips[0]]), float(etas[flips[0] + 1])
        ea = exists[flips[0]]
        for _ in range(60):
            mid = 0.5 * (a + b)
            if (probe(mid) is not None) == ea:
                a = mid
            else:
                b = mid
        threshold = 0.5 * (a + b)
    eta_c = omega_s / sp.omega_c
    summary = {"name": cfg.name, "threshold": threshold, "eta_c": eta_c,
               "threshold_minus_eta_c": None if threshold is None else threshold - eta_c,
               "points": int(etas.size), "max_residual": float(np.nanmax(cols["residual"])) if exists.any() else None}
    write_json(out_dir / "summary.json", summary)
    return summary


def _rabi_u(omega_s: float, omega_1: float, g: float, t: np.ndarray) -> np.ndarray:
    """System amplitude of one level coupled to one mode."""
    delta = omega_s - omega_1
    om = math.sqrt(delta * delta + 4 * g * g)
    ph = np.exp(-0.5j * (omega_s + omega_1) * t)
    return ph * (np.cos(0.5 * om * t) - 1j * delta / om * np.sin(0.5 * om * t))


def run_oracle_check(cfg: ScenarioConfig, out_dir: Path, K: int, fmt: str = "csv", tol: float = 1e-3,
                     base: Path = Path(".")) -> dict:
    """Volterra solution against the discretized-reservoir oracle."""
    system, res, grid, _ = build_scenario(cfg, base)
    out_dir.mkdir(parents=True, exist_ok=True)
    gfs = greenfn.solve(system, res, grid, method=cfg.grid.method)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        dts = oracle.discretize_reservoir(system, res, K)
    rep = oracle.compare_dynamics(gfs, dts)
    write_table(out_dir / "oracle", {"t": rep["t"], "du": rep["du"], "dv": rep["dv"]}, fmt)
    summary = {"name": cfg.name, "modes": K, "max_du": rep["max_du"], "max_dv": rep["max_dv"],
               "recurrence_time": rep["recurrence_time"], "compared_until": float(rep["t"][-1]),
               "mass_missed": dts.mass_total - dts.mass_window, "tolerance": tol,
               "verdict_u": "PASS" if rep["max_du"] < tol else "FAIL",
               "verdict_v": "PASS" if rep["max_dv"] < tol else "FAIL",
               "warnings": [str(w.message) for w in caught]}
    if K == 1 and system.dimension == 1 and len(res) == 1:
        u_ex, _ = oracle.exact_quadratic_dynamics(dts, grid)
        g = float(abs(dts.h[0, 1]))
        u_r = _rabi_u(float(dts.h[0, 0].real), float(dts.omegas[0]), g, grid.times)
        summary["two_level_closed_form_max_diff"] = float(np.max(np.abs(u_ex[:, 0, 0] - u_r)))
    write_json(out_dir / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# figures


def preset_path(name: str) -> Path:
    return Path(str(resources.files("qtherm") / "presets" / f"fig{name}.yaml"))


def _figure_job(job):
    run_data, mode, out, fmt, dt, tmax = job
    cfg = _apply_overrides(ScenarioConfig.model_validate(run_data), dt, tmax)
    out = Path(out)
    if mode == "simulate":
        s = run_simulate(cfg, out, fmt)
        final = s.pop("_final")
        return s, None if final is None else final.matrix
    if mode == "sweep":
        return run_sweep(cfg, out, fmt), None
    return run_specific_heat(cfg, out, fmt), None


def run_figure(name: str, out_dir: Path, fmt: str = "csv", dt=None, tmax=None) -> dict:
    fig: FigureConfig = load_figure(preset_path(name))
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(r.scenario.model_dump(), r.mode, str(out_dir / r.name), fmt, dt, tmax) for r in fig.runs]
    results = _map(_figure_job, jobs)
    summary = {"figure": fig.figure, "description": fig.description,
               "runs": {r.name: res[0] for r, res in zip(fig.runs, results)}}
    if name == "3":
        summary["comparisons"] = _final_state_comparisons(fig, results)
    write_json(out_dir / "figure.json", summary)
    return summary


def _final_state_comparisons(fig: FigureConfig, results) -> dict:
    """Pairwise final-state trace distances and occupation differences
    between runs sharing a coupling."""
    groups: dict = {}
    for r, (s, mat) in zip(fig.runs, results):
        if mat is None:
            continue
        key = r.scenario.reservoirs[0].spectral.model_dump_json()
        groups.setdefault(key, []).append((r.name, mat, s["final"]["nbar"][0]))
    out = {}
    for items in groups.values():
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                (na, a, xa), (nb, b, xb) = items[i], items[j]
                m = max(a.shape[0], b.shape[0])
                pa = np.zeros((m, m), dtype=complex)
                pb = np.zeros((m, m), dtype=complex)
                pa[: a.shape[0], : a.shape[0]] = a
                pb[: b.shape[0], : b.shape[0]] = b
                out[f"{na}|{nb}"] = {"trace_distance": states.trace_distance(pa, pb),
                                     "nbar_difference": abs(xa - xb)}
    return out


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtherm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", type=Path, help="scenario YAML file")
        sp.add_argument("--out", type=Path, default=Path("qtherm-out"), help="output directory")
        sp.add_argument("--dt", type=float, default=None, help="override grid.dt")
        sp.add_argument("--tmax", type=float, default=None, help="override grid.t_max")
        sp.add_argument("--format", choices=("csv", "json"), default="csv", help="series format")

    common(sub.add_parser("simulate", help="run one scenario through the full pipeline"))
    common(sub.add_parser("sweep", help="steady-state rows over a parameter sweep"))
    b = sub.add_parser("boundstate", help="scan the Ohmic coupling for a bound state")
    common(b)
    b.add_argument("--eta-min", type=float, required=True)
    b.add_argument("--eta-max", type=float, required=True)
    b.add_argument("--step", type=float, required=True)
    o = sub.add_parser("oracle-check", help="compare with a discretized reservoir")
    common(o)
    o.add_argument("--modes", type=int, required=True, help="modes per reservoir")
    f = sub.add_parser("figure", help="run a figure preset")
    f.add_argument("name", choices=FIGURES)
    common(f, config=False)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "figure":
            run_figure(args.name, args.out, args.format, args.dt, args.tmax)
            print(f"figure {args.name}: wrote {args.out}")
            return 0
        cfg = _apply_overrides(load_scenario(args.config), args.dt, args.tmax)
        base = args.config.parent
        if args.command == "simulate":
            s = run_simulate(cfg, args.out, args.format, base)
            s.pop("_final", None)
        elif args.command == "sweep":
            s = run_sweep(cfg, args.out, args.format, base)
        elif args.command == "boundstate":
            s = run_boundstate(cfg, args.out, args.eta_min, args.eta_max, args.step, args.format)
        else:
            if args.modes < 1:
                raise ConfigurationError("--modes must be positive")
            s = run_oracle_check(cfg, args.out, args.modes, args.format, base=base)
        print(json.dumps(_clean(s), sort_keys=True))
        return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, np.linalg.LinAlgError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
