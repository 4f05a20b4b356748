import csv
import json

import numpy as np
import pytest
import yaml

from qtherm import cli, config
from qtherm.model import ConfigurationError, SolverError

MODE = {
    "name": "mode",
    "system": {"statistics": "bose", "levels": [1.0], "initial": {"kind": "fock", "index": 2}},
    "reservoirs": [{"spectral": {"kind": "ohmic", "eta": 0.05, "omega_c": 10.0}, "T0": 1.0}],
    "grid": {"dt": 0.0025, "t_max": 2.0},
}

DOT = {
    "name": "dot",
    "system": {"statistics": "fermi", "levels": [1.0, 3.0]},
    "reservoirs": [
        {"spectral": {"kind": "lorentzian", "gamma": 0.2, "d": 10.0}, "T0": 3.0, "mu0": 5.0},
        {"spectral": {"kind": "lorentzian", "gamma": 0.2, "d": 10.0}, "T0": 0.1, "mu0": 2.0},
    ],
    "grid": {"dt": 0.005, "t_max": 2.0},
    "outputs": {"master_equation": True},
}


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def read_csv(path):
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(rows))


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_simulate_writes_series_and_summary(tmp_path, capsys):
    cfg = write_cfg(tmp_path, MODE)
    code, out = run(["simulate", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 0
    summary = json.loads(out.out)
    for f in ("green.csv", "coeffs.csv", "thermo.csv", "summary.json"):
        assert (tmp_path / "o" / f).exists()
    assert summary["first_law_max_relative"] < 1e-6
    green = read_csv(tmp_path / "o" / "green.csv")
    assert len(green) == 801
    assert float(green[0]["t"]) == 0.0


def test_units_comment_in_tables(tmp_path, capsys):
    cfg = write_cfg(tmp_path, MODE)
    run(["simulate", cfg, "--out", tmp_path / "o"], capsys)
    first = (tmp_path / "o" / "thermo.csv").read_text().splitlines()[0]
    assert first.startswith("#") and "hbar = k_B = 1" in first


def test_simulate_fermion_with_master_equation(tmp_path, capsys):
    cfg = write_cfg(tmp_path, DOT)
    code, out = run(["simulate", cfg, "--out", tmp_path / "o", "--format", "json"], capsys)
    assert code == 0
    s = json.loads(out.out)
    assert s["master_equation_max_trace_distance"] < 1e-6
    data = json.loads((tmp_path / "o" / "thermo.json").read_text())
    assert "mu_r" in data["columns"] and "units" in data


def test_zero_coupling_coefficients(tmp_path, capsys):
    d = json.loads(json.dumps(MODE))
    d["reservoirs"][0]["spectral"]["eta"] = 0.0
    cfg = write_cfg(tmp_path, d)
    assert run(["simulate", cfg, "--out", tmp_path / "o"], capsys)[0] == 0
    rows = read_csv(tmp_path / "o" / "coeffs.csv")
    for r in rows:
        assert float(r["eps_r"]) == pytest.approx(1.0, abs=1e-12)
        assert abs(float(r["gamma"])) < 1e-12
        assert abs(float(r["gamma_tilde"])) < 1e-12


def test_reruns_are_byte_identical(tmp_path, capsys):
    cfg = write_cfg(tmp_path, MODE)
    run(["simulate", cfg, "--out", tmp_path / "a"], capsys)
    run(["simulate", cfg, "--out", tmp_path / "b"], capsys)
    for f in ("green.csv", "coeffs.csv", "thermo.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_unknown_key_exits_1(tmp_path, capsys):
    d = json.loads(json.dumps(MODE))
    d["system"]["initail"] = {"kind": "fock"}
    code, out = run(["simulate", write_cfg(tmp_path, d), "--out", tmp_path / "o"], capsys)
    assert code == 1
    assert "system.initail" in out.err


def test_bad_yaml_exits_1(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("system: [unclosed\n")
    code, out = run(["simulate", p], capsys)
    assert code == 1 and "invalid YAML" in out.err


def test_missing_file_exits_1(tmp_path, capsys):
    assert run(["simulate", tmp_path / "nope.yaml"], capsys)[0] == 1


def test_solver_error_exits_2(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise SolverError("diverged")

    monkeypatch.setattr(cli.greenfn, "solve", boom)
    code, out = run(["simulate", write_cfg(tmp_path, MODE), "--out", tmp_path / "o"], capsys)
    assert code == 2 and "diverged" in out.err


def test_bad_thread_count_is_configuration_error(monkeypatch):
    monkeypatch.setenv("QTHERM_THREADS", "zero")
    with pytest.raises(ConfigurationError):
        cli._workers()


def test_sweep_records_failures_per_row(tmp_path, capsys):
    d = json.loads(json.dumps(MODE))
    d["sweep"] = {"parameter": "reservoirs.0.spectral.eta", "values": [0.01, 0.05, 0.2]}
    code, out = run(["sweep", write_cfg(tmp_path, d), "--out", tmp_path / "o"], capsys)
    assert code == 0
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    assert [r["thermalizes"] for r in rows] == ["1", "1", "0"]
    assert all(r["error"] == "-" for r in rows)
    assert json.loads(out.out)["rows"] == 3


def test_sweep_bad_value_recorded_not_fatal(tmp_path, capsys):
    d = json.loads(json.dumps(MODE))
    d["sweep"] = {"parameter": "reservoirs.0.T0", "values": [1.0, -1.0]}
    code, out = run(["sweep", write_cfg(tmp_path, d), "--out", tmp_path / "o"], capsys)
    assert code == 0
    rows = read_csv(tmp_path / "o" / "sweep.csv")
    assert rows[0]["error"] == "-" and rows[1]["error"] != "-"
    assert json.loads(out.out)["failed_rows"] == 1


def test_boundstate_threshold(tmp_path, capsys):
    code, out = run(["boundstate", write_cfg(tmp_path, MODE), "--out", tmp_path / "o",
                     "--eta-min", 0.01, "--eta-max", 0.2, "--step", 0.01], capsys)
    assert code == 0
    s = json.loads(out.out)
    assert abs(s["threshold"] - 0.1) < 1e-8


def test_oracle_check_single_mode(tmp_path, capsys):
    code, out = run(["oracle-check", write_cfg(tmp_path, MODE), "--out", tmp_path / "o", "--modes", 1], capsys)
    assert code == 0
    assert json.loads(out.out)["two_level_closed_form_max_diff"] < 1e-10


def test_oracle_check_rejects_zero_modes(tmp_path, capsys):
    assert run(["oracle-check", write_cfg(tmp_path, MODE), "--modes", 0], capsys)[0] == 1


@pytest.mark.parametrize("name", cli.FIGURES)
def test_presets_validate(name):
    fig = config.load_figure(cli.preset_path(name))
    assert fig.runs
    for r in fig.runs:
        system, res, grid, _ = config.build_scenario(r.scenario)
        assert grid.n_steps > 0


def test_set_path():
    d = {"a": [{"b": 1}, {"b": 2}]}
    out = config.set_path(d, "a.1.b", 5)
    assert out["a"][1]["b"] == 5 and d["a"][1]["b"] == 2
    with pytest.raises(ConfigurationError):
        config.set_path(d, "a.3.b", 1)


def test_overrides_apply(tmp_path):
    cfg = config.load_scenario(write_cfg(tmp_path, MODE))
    cfg2 = cli._apply_overrides(cfg, 0.02, 1.0)
    assert cfg2.grid.dt == 0.02 and cfg2.grid.t_max == 1.0


def test_tabulated_density_file_relative_to_config(tmp_path, capsys):
    w = np.linspace(0, 60, 601)
    np.savetxt(tmp_path / "j.csv", np.column_stack([w, 0.05 * w * np.exp(-w / 10)]),
               delimiter=",", header="omega,J")
    d = json.loads(json.dumps(MODE))
    d["reservoirs"][0]["spectral"] = {"kind": "tabulated", "file": "j.csv"}
    d["reservoirs"][0]["T0"] = 0.0
    d["grid"] = {"dt": 0.01, "t_max": 0.5}
    code, out = run(["simulate", write_cfg(tmp_path, d), "--out", tmp_path / "o"], capsys)
    assert code == 0
    s = json.loads(out.out)
    # no continued self-energy for a table, so no steady block
    assert s["steady"]["available"] is False
