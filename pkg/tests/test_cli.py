import json
from pathlib import Path

import pytest
import yaml

from coldplasma.cli import main, run_command
from coldplasma.config import load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _run(tmp_path, command, cfg, seed=0, name="out"):
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    out = tmp_path / name
    status = main([command, "--config", str(path), "--out", str(out), "--seed", str(seed)])
    return status, json.loads((out / "report.json").read_text()), out


def test_verify_multiplier_from_shipped_config(tmp_path, capsys):
    cfg = load_config(CONFIGS / "exp_switch_lens.yaml")
    cfg["ratio"] = {"trials": 10}
    status, rep, out = _run(tmp_path, "verify-multiplier", cfg)
    assert status == 0 and rep["verdict"] == "pass"
    assert set(rep["checks"]) >= {"positivity_certified", "identity_rel_gap", "min_ratio_positive"}
    assert "kappa" in rep["config"]["multiplier"]["params"]
    assert "delta" in rep["config"]["multiplier"]["auto"]
    assert (out / "timing.json").exists()
    assert capsys.readouterr().out.startswith("verify-multiplier: pass")


def test_check_domain_from_shipped_config(tmp_path):
    status, rep, _ = _run(tmp_path, "check-domain", load_config(CONFIGS / "box_boundary.yaml"))
    assert status == 0
    assert sorted(rep["results"]["G_candidates"]) == ["I", "II"]
    assert rep["results"]["star_shaped"]["star_shaped"] is True


def test_check_friedrichs_reports_q_and_admissibility(tmp_path):
    status, rep, _ = _run(tmp_path, "check-friedrichs", load_config(CONFIGS / "circle_lens_friedrichs.yaml"))
    assert rep["checks"]["Q_min_eigenvalue"]["pass"]
    assert rep["checks"]["beta_split_exact"]["pass"]
    assert rep["results"]["Q"]["min_eigenvalue"] == pytest.approx(0.5)
    assert status == (0 if rep["pass"] else 1)


def test_solve_from_shipped_config(tmp_path):
    status, rep, out = _run(tmp_path, "solve", load_config(CONFIGS / "solve_constant.yaml"))
    assert status == 0
    assert rep["results"]["l2_error"] <= 1e-8
    assert (out / "field.csv").read_text().splitlines()[0] == "x,y,u1,u2"
    assert rep["outputs"] == ["field.csv"]


def test_convergence_of_closed_problem(tmp_path):
    cfg = {"type_change": {"variant": "cold_plasma"},
           "domain": {"name": "rect", "params": {"xa": 2, "xb": 3, "ya": 0, "yb": 0.5}},
           "convergence": {"h": [1 / 8, 1 / 16, 1 / 32],
                           "bc": {"bottom": "tangential", "right": "tangential", "top": "tangential",
                                  "left": "tangential"},
                           "potential": "(x-2)*(x-3)*y*(y-0.5)"}}
    status, rep, _ = _run(tmp_path, "convergence", cfg)
    assert status == 0, rep["results"]["convergence"]
    assert min(rep["results"]["convergence"]["pairwise_order"]) >= 1.0


def test_energy_constant_on_a_coarse_cone(tmp_path):
    cfg = load_config(CONFIGS / "energy_cone.yaml")
    cfg["energy"]["h"] = [1 / 16, 1 / 32]
    status, rep, _ = _run(tmp_path, "energy-constant", cfg)
    assert status == 0
    assert rep["results"]["energy"]["max_over_min"] <= 2.0


def test_reports_are_byte_identical_for_the_same_seed(tmp_path):
    cfg = {"multiplier": {"family": "dilation"}, "domain": {"name": "box"}, "ratio": {"trials": 5},
           "identity": {"h": [1 / 32, 1 / 64]}}
    _, _, a = _run(tmp_path, "verify-multiplier", cfg, seed=11, name="a")
    _, _, b = _run(tmp_path, "verify-multiplier", cfg, seed=11, name="b")
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_rerun_from_echo_reproduces_the_report(tmp_path):
    cfg = {"multiplier": {"family": "matrix_first_order"}, "domain": {"name": "box"}, "ratio": {"trials": 5},
           "identity": {"h": [1 / 32, 1 / 64]}}
    _, rep, a = _run(tmp_path, "verify-multiplier", cfg, seed=3, name="a")
    echo = tmp_path / "echo.json"
    echo.write_text(json.dumps(rep["config"]))
    out = tmp_path / "b"
    main(["verify-multiplier", "--config", str(echo), "--out", str(out), "--seed", "3"])
    assert (a / "report.json").read_bytes() == (out / "report.json").read_bytes()


def test_different_seeds_change_random_trials(tmp_path):
    cfg = {"multiplier": {"family": "dilation"}, "domain": {"name": "box"}, "ratio": {"trials": 3},
           "identity": {"h": [1 / 32, 1 / 64]}}
    _, r1, _ = _run(tmp_path, "verify-multiplier", cfg, seed=1, name="a")
    _, r2, _ = _run(tmp_path, "verify-multiplier", cfg, seed=2, name="b")
    assert r1["results"]["ratio"] != r2["results"]["ratio"]


def test_zero_multiplier_is_a_vacuous_pass(tmp_path):
    cfg = {"multiplier": {"family": "explicit", "params": {"a": "0", "b": "0", "c": "0"}}, "domain": {"name": "box"}}
    status, rep, _ = _run(tmp_path, "verify-multiplier", cfg)
    assert status == 0
    assert rep["verdict"] == "vacuous-pass" and "zero_multiplier" in rep["flags"]


@pytest.mark.parametrize("cfg", [
    {"multiplier": {"family": "no_such_family"}},
    {"multiplier": {"family": "explicit", "params": {"a": "x +* y", "b": "0", "c": "0"}}},
    {"multiplier": {"family": "dilation"}, "domain": {"name": "triangle"}},
    {"multiplier": {"family": "dilation"}, "positivity": {"dleta": 1}},
])
def test_configuration_errors_exit_with_status_two(tmp_path, cfg):
    status, rep, _ = _run(tmp_path, "verify-multiplier", cfg)
    assert status == 2
    assert rep["pass"] is False and rep["error"]["type"]


def test_parse_error_reports_byte_offset(tmp_path):
    cfg = {"multiplier": {"family": "explicit", "params": {"a": "x +* y", "b": "0", "c": "0"}}}
    _, rep, _ = _run(tmp_path, "verify-multiplier", cfg)
    assert rep["error"]["type"] == "ParseError" and rep["error"]["offset"] == 3


def test_missing_config_file_exits_with_status_two(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_failed_check_exits_with_status_one(tmp_path):
    cfg = load_config(CONFIGS / "box_boundary.yaml")
    cfg["bc_checks"]["require"] = {"star1": "all"}
    status, rep, _ = _run(tmp_path, "check-domain", cfg)
    assert status == 1 and rep["verdict"] == "fail"
    assert not rep["checks"]["star1_passing_arcs"]["pass"]


def test_constraint_violation_exits_with_status_one(tmp_path):
    cfg = {"multiplier": {"family": "matrix_first_order", "params": {"s": 0.0}}, "domain": {"name": "box"}}
    status, rep, _ = _run(tmp_path, "verify-multiplier", cfg)
    assert status == 1
    assert rep["error"]["type"] == "ConstraintViolated" and rep["error"]["name"] == "2cy+s>0"


def test_run_command_returns_report(tmp_path):
    rep, status = run_command("check-domain", {"domain": {"name": "box"}, "bc_checks": {"checks": []}}, 0, tmp_path)
    assert status == 0 and rep["results"]["classification"]
