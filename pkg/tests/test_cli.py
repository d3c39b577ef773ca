"""Command-line entry points: exit codes, report shape, artifacts."""

import json

import numpy as np
import pytest

from exitrate.cli import main
from exitrate.problems import problem_by_name, save_problem


def _run_json(capsys, argv):
    rc = main(argv)
    out = capsys.readouterr().out
    return rc, json.loads(out)


def test_solve_reports_the_eigenvalue(capsys):
    rc, rep = _run_json(capsys, ["solve", "--problem", "bm-interval", "--h", "0.03125"])
    assert rc == 0
    assert rep["lam"] == pytest.approx(np.pi ** 2 / 2, abs=5e-3)
    assert rep["n_nodes"] == 31
    lo, hi = rep["cw_interval"]
    assert lo - 1e-9 <= rep["lam"] <= hi + 1e-9
    assert rep["config"]["problem"] == "bm-interval"


def test_solve_writes_artifacts(tmp_path):
    out = tmp_path / "solve"
    rc = main(
        ["solve", "--problem", "bm-interval", "--h", "0.0625", "--out", str(out)]
    )
    assert rc == 0
    assert (out / "solve_report.json").exists()
    assert (out / "eigenpair.csv").exists()
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["lam"] == pytest.approx(np.pi ** 2 / 2, abs=0.05)


def test_parameters_flow_through(capsys):
    rc, rep = _run_json(
        capsys,
        ["solve", "--problem", "drift-interval", "--param", "c=2.0", "--h", "0.03125"],
    )
    assert rc == 0
    assert rep["lam"] == pytest.approx(np.pi ** 2 / 2 + 2.0, abs=0.02)
    assert rep["config"]["params"] == {"c": 2.0}


def test_optimize_improves_on_the_first_action(capsys):
    rc, rep = _run_json(
        capsys, ["optimize", "--problem", "bang-bang", "--h", "0.125", "--mode", "MAX"]
    )
    assert rc == 0
    lams = rep["lam_sequence"]
    assert rep["lam"] == pytest.approx(min(lams))
    assert all(b <= a + 1e-12 for a, b in zip(lams, lams[1:]))
    assert rep["converged"]
    assert rep["sweeps"] == len(lams)
    rc2, rep2 = _run_json(
        capsys, ["optimize", "--problem", "bang-bang", "--h", "0.125", "--mode", "MIN"]
    )
    assert rep2["lam"] > rep["lam"]


def test_qprocess_report_and_artifacts(tmp_path, capsys):
    out = tmp_path / "qp"
    rc = main(
        ["qprocess", "--problem", "drift-interval", "--h", "0.0625", "--out", str(out)]
    )
    assert rc == 0
    rep = json.loads((out / "qprocess_report.json").read_text())
    assert rep["row_sum_residual"] <= 1e-8
    assert rep["product_residual"] <= 1e-10
    assert rep["certificate"]["rho"] > 0.0
    assert (out / "measures.csv").exists()


def test_variational_value_tracks_the_optimum(tmp_path):
    out = tmp_path / "var"
    rc = main(
        ["variational", "--problem", "bang-bang", "--h", "0.25", "--out", str(out)]
    )
    assert rc == 0
    rep = json.loads((out / "variational_report.json").read_text())
    assert rep["lp_value"] == pytest.approx(rep["lam_star"], rel=1e-5)
    assert rep["rel_gap"] <= 1e-5
    assert rep["transform_point_objective"] >= rep["lp_value"] - 1e-9
    assert rep["structure"]["all_ok"]
    assert (out / "occupation.mps").exists()
    assert (out / "occupation.csv").exists()


def test_simulate_smoke(tmp_path):
    out = tmp_path / "sim"
    rc = main(
        [
            "simulate",
            "--problem",
            "bm-interval",
            "--h",
            "0.125",
            "--paths",
            "2000",
            "--dt",
            "0.002",
            "--T",
            "0.8",
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    rep = json.loads((out / "simulate_report.json").read_text())
    assert rep["killed_qpaths"] == 0
    assert rep["beta_hat"] == pytest.approx(np.pi ** 2 / 2, rel=0.35)
    assert (out / "ensemble.csv").exists()
    assert (out / "occupancy.csv").exists()


def test_representations_agree(capsys):
    rc, rep = _run_json(
        capsys, ["representations", "--problem", "bm-interval", "--h", "0.015625"]
    )
    assert rc == 0
    vals = [
        rep["values"]["log_gradient_form"],
        rep["values"]["log_gradient_family_min"],
        rep["values"]["eigenfunction_ratio"],
        rep["values"]["eigenfunction_ratio_family_min"],
    ]
    assert max(vals) - min(vals) <= 0.05 * min(vals)
    assert rep["max_pairwise_rel_diff"] <= 0.05
    assert rep["lam_star"] == pytest.approx(np.pi ** 2 / 2, abs=5e-3)


def test_problem_file_round_trip(tmp_path, capsys):
    path = tmp_path / "custom.json"
    save_problem(problem_by_name("drift-interval", c=1.5), str(path))
    rc, rep = _run_json(capsys, ["solve", "--problem", str(path), "--h", "0.03125"])
    assert rc == 0
    assert rep["lam"] == pytest.approx(np.pi ** 2 / 2 + 1.125, abs=0.02)


def test_unknown_problem_fails_cleanly(capsys):
    rc = main(["solve", "--problem", "bogus"])
    captured = capsys.readouterr()
    assert rc == 1
    assert captured.err.startswith("error:")
    assert "bogus" in captured.err


def test_missing_problem_file_fails_cleanly(capsys):
    rc = main(["solve", "--problem", "no-such-file.json"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_nonconforming_spacing_fails_cleanly(capsys):
    rc = main(["solve", "--problem", "bm-interval", "--h", "0.3"])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_reports_carry_no_timing_noise(capsys):
    rc, rep = _run_json(capsys, ["solve", "--problem", "bm-interval", "--h", "0.125"])
    assert rc == 0
    text = json.dumps(rep)
    for banned in ("time", "date", "thread", "duration"):
        assert banned not in text.lower()
