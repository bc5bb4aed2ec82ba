import json

import pytest

from fracpme.cli import EXIT_AUDIT, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main

CONFIG = """{
  "version": 1,
  "name": "mini",
  "operator": {"kind": "rfl", "s": 0.25, "a": -1.0, "b": 1.0, "n": 48},
  "nonlinearity": [{"coeff": 1.0, "exponent": 2.0}],
  "datum": {"family": "bump"},
  "time": {"T": 0.5, "n_steps": 8},
  "audits": ["benilan_crandall", "propagation"]
}
"""


@pytest.fixture
def cfg(tmp_path):
    def write(text=CONFIG, name="c.json"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def last_json(err: str) -> dict:
    return json.loads(err.strip().splitlines()[-1])


def test_solve_writes_outputs(cfg, tmp_path):
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg(), "--out", str(out)]) == EXIT_OK
    assert (out / "trajectory.csv").exists() and (out / "trajectory.meta.json").exists()


def test_rfl_order_above_half_is_config_error(cfg, tmp_path, capsys):
    path = cfg(CONFIG.replace('"s": 0.25', '"s": 0.6'))
    assert main(["solve", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = last_json(capsys.readouterr().err)
    assert err["error"] == "config" and "N > 2s" in err["message"] and err["line"] == 4


def test_absurd_time_step_is_solver_failure(cfg, tmp_path, capsys):
    path = cfg(CONFIG.replace('"T": 0.5, "n_steps": 8', '"T": 1e300, "n_steps": 1'))
    assert main(["solve", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_SOLVER
    err = last_json(capsys.readouterr().err)
    assert err["error"] == "solver" and err["diagnostics"]["attempts"]


def test_audit_pass(cfg, tmp_path):
    assert main(["audit", "--config", cfg(), "--out", str(tmp_path / "o"), "--jobs", "2"]) == EXIT_OK
    assert (tmp_path / "o" / "reports" / "propagation.json").exists()


def test_audit_typo_lists_available(cfg, tmp_path, capsys):
    path = cfg(CONFIG.replace('"propagation"', '"propagaton"'))
    assert main(["audit", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = last_json(capsys.readouterr().err)
    assert "benilan_crandall" in err["message"] and err["line"] == 8


def test_classical_lower_audit_fails_without_expected_fail(cfg, tmp_path):
    text = CONFIG.replace('"kind": "rfl", "s": 0.25', '"kind": "classical"').replace(
        '["benilan_crandall", "propagation"]',
        '[{"name": "ghp_lower", "params": {"regime": "GHP_II", "t_star": 10.0, "window": "before"}}]')
    assert main(["audit", "--config", cfg(text), "--out", str(tmp_path / "a")]) == EXIT_AUDIT
    flipped = text.replace('"window": "before"}', '"window": "before"}, "expected_fail": true')
    assert main(["audit", "--config", cfg(flipped, "f.json"), "--out", str(tmp_path / "b")]) == EXIT_OK


def test_audit_stored_trajectory(cfg, tmp_path):
    path = cfg()
    assert main(["solve", "--config", path, "--out", str(tmp_path / "s")]) == EXIT_OK
    rc = main(["audit", "--config", path, "--trajectory", str(tmp_path / "s" / "trajectory.csv"),
               "--out", str(tmp_path / "a")])
    assert rc == EXIT_OK
    assert main(["audit", "--config", path, "--trajectory", str(tmp_path / "none.csv")]) == EXIT_CONFIG


def test_filter_and_unknown_filter(cfg, tmp_path):
    out = tmp_path / "o"
    assert main(["audit", "--config", cfg(), "--out", str(out), "--filter", "propagation"]) == EXIT_OK
    assert [p.name for p in (out / "reports").iterdir()] == ["propagation.json"]
    assert main(["audit", "--config", cfg(), "--filter", "bogus"]) == EXIT_CONFIG


def test_strict_rejects_unknown_keys(cfg, tmp_path, capsys):
    path = cfg(CONFIG.replace('"name": "mini",', '"name": "mini",\n  "colour": "red",'))
    assert main(["solve", "--config", path, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["solve", "--config", path, "--strict", "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    assert last_json(capsys.readouterr().err)["line"] == 4


def test_bad_json_is_line_anchored(cfg, capsys):
    assert main(["solve", "--config", cfg(CONFIG.replace('"b": 1.0,', '"b": 1.0,,'))]) == EXIT_CONFIG
    assert last_json(capsys.readouterr().err)["line"] == 4


def test_missing_config(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_env_overrides_output_root(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("FRACPME_OUT", str(tmp_path / "root"))
    assert main(["solve", "--config", cfg()]) == EXIT_OK
    assert (tmp_path / "root" / "mini" / "trajectory.csv").exists()


def test_sweep(cfg, tmp_path):
    data = json.loads(CONFIG)
    data["sweep"] = {"datum.amplitude": [0.5, 1.0], "time.n_steps": [4]}
    data["datum"]["amplitude"] = 1.0
    out = tmp_path / "sw"
    assert main(["sweep", "--config", cfg(json.dumps(data, indent=2)), "--out", str(out)]) == EXIT_OK
    index = json.loads((out / "sweep.json").read_text())
    assert [r["values"]["datum.amplitude"] for r in index] == [0.5, 1.0]
    assert main(["sweep", "--config", cfg()]) == EXIT_CONFIG


def test_eigen_and_kernel(cfg, tmp_path, capsys):
    assert main(["eigen", "--config", cfg(), "--out", str(tmp_path / "e")]) == EXIT_OK
    info = json.loads((tmp_path / "e" / "eigen.json").read_text())
    assert info["lambda1"] > 0 and (tmp_path / "e" / "phi1.csv").exists()
    assert main(["kernel", "--config", cfg(), "--out", str(tmp_path / "k")]) == EXIT_OK
    assert "kernel_form" in json.loads((tmp_path / "k" / "kernel.json").read_text())


def test_tables_small(cfg, tmp_path):
    path = cfg('{"n": 32, "bundles": ["classical"]}', "t.json")
    assert main(["tables", "--config", path, "--out", str(tmp_path / "t")]) == EXIT_OK
    text = (tmp_path / "t" / "table_classical.txt").read_text()
    assert "classical_large_time" in text and "regime-boundary" in text
