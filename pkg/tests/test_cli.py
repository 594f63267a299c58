import csv
import json

import numpy as np
import pytest

from birkhoff_ocp.cli import (
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_VERIFY_FAILED,
    main,
)
from birkhoff_ocp.problems import lq_analytic_solution
from birkhoff_ocp.vnv import save_solution


def test_grid_csv(capsys):
    assert main(["grid", "--grid", "lgl", "--N", "4"]) == EXIT_OK
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert len(rows) == 5
    assert sum(float(r["w"]) for r in rows) == pytest.approx(2.0, abs=1e-13)


def test_grid_json_to_file(tmp_path):
    out = tmp_path / "g.json"
    assert main(["grid", "--grid", "cgr", "--N", "6", "--format", "json", "--out", str(out)]) == EXIT_OK
    data = json.loads(out.read_text())
    assert len(data["tau"]) == 7 and data["grid"] == "cgr"


def test_birkhoff_csv_directory(tmp_path, capsys):
    assert main(["birkhoff", "--grid", "cgl", "--N", "8", "--out", str(tmp_path)]) == EXIT_OK
    Ba = np.loadtxt(tmp_path / "Ba.csv", delimiter=",")
    assert Ba.shape == (9, 9)
    res = json.loads(capsys.readouterr().out)
    assert res["prop3"] <= 1e-12


def test_birkhoff_csv_needs_out():
    assert main(["birkhoff", "--grid", "cgl", "--N", "8"]) == EXIT_USAGE


def test_cond_sweep(capsys):
    assert main(["cond", "--grid", "cgl", "--from", "10", "--to", "30", "--step", "10"]) == EXIT_OK
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert [int(r["N"]) for r in rows] == [10, 20, 30]
    assert all(float(r["cond_full"]) > float(r["cond_block"]) for r in rows)


@pytest.mark.parametrize(
    "argv",
    [
        ["grid", "--grid", "xyz", "--N", "4"],
        ["grid", "--grid", "cgl", "--N", "0"],
        ["cond", "--grid", "cgl", "--from", "30", "--to", "10"],
        ["solve", "--problem", "nope"],
        ["frobnicate"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "solve" in capsys.readouterr().out


def test_solve_then_verify_lq(tmp_path):
    sol = tmp_path / "lq.json"
    rep = tmp_path / "rep.json"
    assert main(["solve", "--problem", "lq", "--out", str(sol)]) == EXIT_OK
    assert json.loads(sol.read_text())["status"] == "Optimal"
    assert main(["verify", "--solution", str(sol), "--out", str(rep), "--csv", str(tmp_path / "p.csv")]) == EXIT_OK
    report = json.loads(rep.read_text())
    assert report["verdict"] and report["feasibility"]["verdict"]
    assert (tmp_path / "p.csv").read_text().startswith("t,x0,x1,u0")


STARVED = {"max_outer_iters": 1, "max_inner_iters": 1, "restoration_iters": 0,
           "least_squares_multipliers": False, "kkt_polish": False}


def test_solve_not_converged_exit(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"solver": STARVED}))
    argv = ["solve", "--problem", "ml1", "--N", "20", "--ladder", "none", "--config", str(cfg),
            "--out", str(tmp_path / "s.json")]
    assert main(argv) == EXIT_NOT_CONVERGED
    assert json.loads((tmp_path / "s.json").read_text())["status"] == "MaxIter"


def test_explicit_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(STARVED))
    out = tmp_path / "s.json"
    base = ["solve", "--problem", "ml1", "--N", "20", "--ladder", "none", "--out", str(out), "--config", str(cfg)]
    assert main(base + ["--max-outer", "200", "--max-inner", "200"]) == EXIT_OK
    assert json.loads(out.read_text())["status"] in ("Optimal", "Feasible")


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["solve", "--problem", "lq", "--config", str(cfg), "--out", str(tmp_path / "s.json")]) == EXIT_USAGE


def test_time_limit_flag(tmp_path):
    argv = ["solve", "--problem", "ml1", "--N", "20", "--ladder", "none", "--time-limit", "1e-6",
            "--out", str(tmp_path / "s.json")]
    main(argv)
    assert json.loads((tmp_path / "s.json").read_text())["status"] != "Optimal"


def test_verify_rejects_infeasible(tmp_path):
    sol = lq_analytic_solution(20)
    sol.U = sol.U + 1.0
    path = tmp_path / "bad.json"
    save_solution(sol, path)
    assert main(["verify", "--solution", str(path), "--out", str(tmp_path / "r.json")]) == EXIT_VERIFY_FAILED


def test_verify_missing_file(tmp_path):
    assert main(["verify", "--solution", str(tmp_path / "none.json")]) == EXIT_USAGE


def test_bench_lq(tmp_path, capsys):
    assert main(["bench", "--problems", "lq", "--out", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader((tmp_path / "summary.csv").read_text().splitlines()))
    assert rows[0]["verdict"] == "pass"
    assert (tmp_path / "lq_solution.json").exists()
