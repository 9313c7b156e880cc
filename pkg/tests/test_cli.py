import json
import subprocess
import sys

import pytest

from immunoboost import spectrum, verify
from immunoboost.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, main


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def test_equilibrium_subthreshold(tmp_path, capsys):
    params = json.dumps({"r0": 0.9, "gamma": 17, "d": 0.02, "nu": 1, "tau": 15})
    assert run(tmp_path, "equilibrium", "--params", params) == EXIT_OK
    data = json.loads((tmp_path / "equilibrium.json").read_text())
    assert data["kind"] == "DFE" and data["S_star"] == 1.0 and data["r0"] == pytest.approx(0.9)
    assert set(data) >= {"kind", "S_star", "I_star", "residual", "method", "r0"}


def test_spectrum_preset_unstable(tmp_path):
    assert run(tmp_path, "spectrum", "--preset", "nu4.8-r0-4") == EXIT_OK
    data = json.loads((tmp_path / "spectrum.json").read_text())
    assert data["rightmost"]["re"] > 0 and data["class"] == "EndemicUnstable"
    assert data["n_collocation"] >= 16 and data["bound"] > 0
    assert all(r["residual"] < 1e-8 * 100 for r in data["roots"])


def test_simulate_writes_csv_and_summary(tmp_path):
    params_file = tmp_path / "p.json"
    params_file.write_text(json.dumps({"r0": 3, "gamma": 1, "d": 0.1, "nu": 0.5, "tau": 2}))
    before = params_file.read_bytes()
    config = json.dumps({"t_end": 5, "step": 0.02, "record_every": 5,
                         "history": {"type": "linear", "start": [0.5, 0.05], "end": [0.4, 0.1]}})
    assert run(tmp_path, "simulate", "--params", str(params_file), "--config", config) == EXIT_OK
    lines = (tmp_path / "trajectory.csv").read_text().strip().split("\n")
    assert lines[0] == "t,S,I,R,A,A_ref,A_rel_error,I_identity,I_rel_error"
    assert len(lines) == 1 + 51
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["violations"]["negativity"] == 0
    assert params_file.read_bytes() == before


def test_bad_json_and_keys_exit_2(tmp_path, capsys):
    assert run(tmp_path, "equilibrium", "--params", "{not json") == EXIT_INPUT
    capsys.readouterr()
    assert run(tmp_path, "equilibrium", "--params", '{"beta": 1, "gamma": 1, "d": 0, "nu": 0, "tau": 1, "x": 2}') \
        == EXIT_INPUT
    err = json.loads(capsys.readouterr().err)
    assert err["key"] == "x"
    assert run(tmp_path, "simulate", "--preset", "pertussis", "--config", '{"t_end": 1, "stepp": 2}') == EXIT_INPUT
    assert run(tmp_path, "chart", "fig9") == EXIT_INPUT


def test_numeric_failure_exit_3(tmp_path, capsys):
    # nu = d = 0 with tau > 0 has no isolated endemic state
    params = json.dumps({"beta": 3, "gamma": 1, "d": 0, "nu": 0, "tau": 2})
    assert run(tmp_path, "equilibrium", "--params", params) == EXIT_NUMERIC
    assert "error" in json.loads(capsys.readouterr().err)


def test_chart_outputs(tmp_path, monkeypatch):
    monkeypatch.setenv("IMMUNOBOOST_THREADS", "1")
    assert run(tmp_path, "chart", "fig1b", "--resolution", "4", "5") == EXIT_OK
    for name in ("fig1b.csv", "fig1b.svg", "fig1b_summary.json"):
        assert (tmp_path / name).exists()
    assert len((tmp_path / "fig1b.csv").read_text().strip().split("\n")) == 21
    monkeypatch.setenv("IMMUNOBOOST_THREADS", "x")
    assert run(tmp_path, "chart", "fig1b", "--resolution", "2", "2") == EXIT_INPUT
    assert run(tmp_path, "chart", "fig1b", "--resolution", "2", "2", "--threads", "1", "--no-refine") == EXIT_OK


def test_verify_is_deterministic_and_passes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["verify", "--seed", "7", "--out", str(a)]) == EXIT_OK
    assert main(["verify", "--seed", "7", "--out", str(b)]) == EXIT_OK
    assert (a / "verify_report.json").read_bytes() == (b / "verify_report.json").read_bytes()


def test_verify_catches_wrong_sign_in_sigma(tmp_path, monkeypatch):
    original = spectrum._sigma

    def flipped(params, I):
        return 2 * params.gamma - original(params, I)

    monkeypatch.setattr(spectrum, "_sigma", flipped)
    report = verify.run_properties(verify.DEFAULT_SEED)
    status = {p["name"]: p["passed"] for p in report["properties"]}
    assert status["spectrum_residuals"] is False
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_VERIFY
    failing = json.loads((tmp_path / "verify_report.json").read_text())
    bad = next(p for p in failing["properties"] if p["name"] == "spectrum_residuals")
    assert bad["failures"] and "params" in bad["failures"][0]


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "immunoboost", "equilibrium", "--preset", "pertussis",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0 and "Endemic" in out.stdout
