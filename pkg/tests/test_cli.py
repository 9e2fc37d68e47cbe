import csv
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ergodic_rvi.cli import THREADS_ENV, TRACE_COLUMNS, main
from ergodic_rvi.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "docs" / "configs"
LQ_BETA = 2 * (np.sqrt(2.0) - 1.0)


def cfg(name):
    return str(CONFIGS / name)


def write_cfg(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def summary(out):
    return json.loads((Path(out) / "summary.json").read_text())


# -- validate -------------------------------------------------------------------------------

def test_validate_golden_configs(capsys):
    for name in ("mdp_e1.json", "mdp_e1_bertsekas.json", "ctmc_c1.json", "diffusion_lq.json",
                 "diffusion_inline.json"):
        assert main(["validate", "--config", cfg(name)]) == 0, name
    assert "ok" in capsys.readouterr().out


def test_validate_row_sum_violation(capsys):
    assert main(["validate", "--config", cfg("mdp_bad_row.json")]) == 1
    assert "(state 0, action a): row sum 1.1 != 1" in capsys.readouterr().out


def test_unknown_builtin(capsys):
    assert main(["validate", "--config", cfg("unknown_builtin.json")]) == 2
    assert "unknown problem" in capsys.readouterr().err


def test_parse_error_has_line_context(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "kind": "mdp",\n  "model": {"builtin": "e1"},,\n}\n')
    assert main(["validate", "--config", str(path)]) == 2
    assert "broken.json:3:" in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("raw, where", [
    ({"kind": "mdp", "model": {"builtin": "e1"}, "algorithm": "pde-rvi"}, "algorithm"),
    ({"kind": "mdp", "model": {"builtin": "e1"}, "options": {"tol": -1}}, "options.tol"),
    ({"kind": "graph", "model": {}}, "kind"),
    ({"kind": "ctmc", "model": {"builtin": "e1"}}, "model.builtin"),
    ({"kind": "mdp", "model": {"actions": [["a"]], "trans": [[[1.0, 0.0]]], "cost": [[1.0]]}},
     "model.trans[0]"),
    ({"kind": "diffusion", "model": {"builtin": "lq", "params": {"dx": 7.0}}}, "model.params"),
])
def test_config_errors_name_the_field(raw, where):
    with pytest.raises(ConfigError) as info:
        parse_config(raw)
    assert info.value.where == where


def test_resolved_config_fills_defaults():
    c = load_config(cfg("mdp_e1_bertsekas.json"))
    assert c.resolved["options"]["gamma_schedule"] == "constant"
    assert c.resolved["anchor"] == 1
    assert c.resolved["compare"]["beta_tol"] == 1e-8


# -- solve ------------------------------------------------------------------------------------

def test_solve_e1_white(tmp_path, capsys):
    assert main(["solve", "--config", cfg("mdp_e1.json"), "--out", str(tmp_path)]) == 0
    s = summary(tmp_path)
    assert abs(s["terminal_beta"] - 0.5) <= 1e-8
    assert s["status"] == "converged"
    assert s["terminal_residual"] <= 1e-9
    with open(tmp_path / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert float(rows[-1][1]) == s["terminal_beta"]


def test_solve_bertsekas(tmp_path):
    assert main(["solve", "--config", cfg("mdp_e1_bertsekas.json"), "--out", str(tmp_path)]) == 0
    assert abs(summary(tmp_path)["terminal_beta"] - 0.5) <= 1e-8


def test_solve_c1(tmp_path):
    assert main(["solve", "--config", cfg("ctmc_c1.json"), "--out", str(tmp_path)]) == 0
    assert abs(summary(tmp_path)["terminal_beta"] - 2 / 3) <= 1e-6


def test_solve_lq(tmp_path):
    assert main(["solve", "--config", cfg("diffusion_lq.json"), "--out", str(tmp_path)]) == 0
    s = summary(tmp_path)
    assert abs(s["terminal_beta"] - LQ_BETA) / LQ_BETA <= 0.02
    with open(tmp_path / "field.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "x", "value", "policy"]


def test_solve_oracle_algorithm(tmp_path):
    path = write_cfg(tmp_path, {"kind": "ctmc", "model": {"builtin": "c1"}, "algorithm": "oracle"})
    assert main(["solve", "--config", path, "--out", str(tmp_path / "o")]) == 0
    s = summary(tmp_path / "o")
    assert s["terminal_beta"] == pytest.approx(2 / 3, abs=1e-15)
    np.testing.assert_allclose(s["terminal_value"], [1 / 3, 0.0], atol=1e-15)


def test_solve_divergence_keeps_partial_trace(tmp_path, capsys):
    path = write_cfg(tmp_path, {"kind": "mdp", "model": {"builtin": "e1"},
                                "options": {"blowup": 0.5}})
    assert main(["solve", "--config", path, "--out", str(tmp_path / "d")]) == 3
    assert summary(tmp_path / "d")["status"] == "diverged"
    assert (tmp_path / "d" / "trace.csv").read_text().count("\n") >= 2


def test_solve_invalid_model_exit_1(tmp_path):
    assert main(["solve", "--config", cfg("mdp_bad_row.json"), "--out", str(tmp_path)]) == 1


def test_summary_echoes_resolved_config(tmp_path):
    main(["solve", "--config", cfg("ctmc_c1.json"), "--out", str(tmp_path)])
    conf = summary(tmp_path)["config"]
    assert conf["algorithm"] == "ctmc-rvi"
    assert conf["options"]["method"] == "rk4"
    assert conf["model"]["rates"] == [[[-1.0, 1.0]], [[2.0, -2.0]]]
    assert conf["output"] == {"field_csv": False}


@pytest.mark.parametrize("name", ["mdp_e1.json", "ctmc_c1.json", "diffusion_lq_coarse.json"])
def test_outputs_are_byte_identical(tmp_path, name):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["solve", "--config", cfg(name), "--out", str(a)])
    main(["solve", "--config", cfg(name), "--out", str(b)])
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_floats_written_with_17_digits(tmp_path):
    main(["solve", "--config", cfg("ctmc_c1.json"), "--out", str(tmp_path)])
    with open(tmp_path / "trace.csv") as fh:
        last = list(csv.reader(fh))[-1]
    assert float(last[1]) == summary(tmp_path)["terminal_beta"]


# -- compare --------------------------------------------------------------------------------

def test_compare_e1_passes(tmp_path, capsys):
    assert main(["compare", "--config", cfg("mdp_e1.json"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "compare.json").read_text())
    assert rep["passed"] and rep["checks"]["beta"]["error"] <= 1e-8
    assert capsys.readouterr().out.strip().endswith("PASS")


def test_compare_c1_passes(tmp_path):
    assert main(["compare", "--config", cfg("ctmc_c1.json"), "--out", str(tmp_path)]) == 0


def test_compare_lq_passes_with_identity_and_bound(tmp_path):
    assert main(["compare", "--config", cfg("diffusion_lq.json"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "compare.json").read_text())
    checks = rep["checks"]
    assert checks["beta"]["error"] <= 0.02 and checks["value"]["error"] <= 0.05
    assert checks["vv_identity"]["passed"] and checks["bound"]["passed"]


def test_compare_coarse_lq_fails_with_margins(tmp_path, capsys):
    assert main(["compare", "--config", cfg("diffusion_lq_coarse.json"),
                 "--out", str(tmp_path)]) == 4
    rep = json.loads((tmp_path / "compare.json").read_text())
    assert not rep["passed"]
    assert rep["checks"]["beta"]["error"] > rep["checks"]["beta"]["tol"]
    assert "beta: FAIL" in capsys.readouterr().out


def test_compare_coarse_upwind_fails(tmp_path):
    path = write_cfg(tmp_path, {"kind": "diffusion",
                                "model": {"builtin": "lq",
                                          "params": {"L": 5.0, "dx": 0.5, "u_max": 3.0,
                                                     "du": 0.1, "drift_scheme": "upwind"}}})
    assert main(["compare", "--config", path, "--out", str(tmp_path / "c")]) == 4


def test_compare_without_oracle_is_config_error(tmp_path, capsys):
    assert main(["compare", "--config", cfg("diffusion_inline.json"), "--out", str(tmp_path)]) == 2
    assert "no oracle" in capsys.readouterr().err


def test_compare_rejects_reducible_model(tmp_path, capsys):
    path = write_cfg(tmp_path, {"kind": "ctmc", "model": {
        "actions": [["a", "b"], ["a"]],
        "rates": [[[-1.0, 1.0], [0.0, 0.0]], [[1.0, -1.0]]],
        "cost": [[1.0, 0.0], [1.0]]}})
    # the uniform lower-bound graph is reducible, so validation catches it first
    assert main(["compare", "--config", path, "--out", str(tmp_path / "c")]) == 1


# -- threads and entry point -------------------------------------------------------------------

def test_threads_flag_and_env(tmp_path, monkeypatch):
    assert main(["solve", "--config", cfg("mdp_e1.json"), "--out", str(tmp_path / "a"),
                 "--threads", "1"]) == 0
    monkeypatch.setenv(THREADS_ENV, "1")
    assert main(["solve", "--config", cfg("mdp_e1.json"), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "summary.json").read_bytes() == \
        (tmp_path / "b" / "summary.json").read_bytes()


def test_module_entry_point(tmp_path):
    env = dict(os.environ)
    proc = subprocess.run([sys.executable, "-m", "ergodic_rvi", "validate", "--config",
                           cfg("mdp_bad_row.json")], capture_output=True, text=True, env=env)
    assert proc.returncode == 1
    assert "row sum 1.1 != 1" in proc.stdout
