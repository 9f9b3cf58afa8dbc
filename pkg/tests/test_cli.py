import csv
import json

import numpy as np
import pytest

from plasmalab import cli, runner
from plasmalab.branch import NewtonDivergence
from plasmalab.config import build_config
from plasmalab.emden import ProblemParams, lambda_plus
from plasmalab.runner import COLUMNS, sweep_lambdas
from plasmalab.serialize import dumps, fmt, jsonable
from plasmalab.verify import CHECKS, run_verify


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(argv, tmp_path):
    return cli.main([*argv, "--out", str(tmp_path)])


class TestSerialize:
    def test_jsonable(self):
        out = jsonable({"a": np.float64(1.5), "b": np.array([1, 2]), "c": float("nan"), "d": (np.int64(3),)})
        assert out == {"a": 1.5, "b": [1, 2], "c": None, "d": [3]}

    def test_fmt_round_trips(self):
        x = 0.1 + 0.2
        assert float(fmt(x)) == x
        assert fmt(True) == "true"

    def test_dumps_sorted_with_newline(self):
        assert dumps({"b": 1, "a": 2}) == '{\n  "a": 2,\n  "b": 1\n}\n'


class TestSweepLambdas:
    def test_default_grid(self):
        cfg = build_config(env={})
        lams, capped = sweep_lambdas(cfg, 10.0)
        assert lams.size == 40 and lams[-1] == pytest.approx(30.0) and capped is None

    def test_step_and_cap(self):
        cfg = build_config(env={}, lambda_max=100.0, lambda_step=5.0, lambda_cap=5.0)
        lams, capped = sweep_lambdas(cfg, 10.0)
        assert capped == 50.0 and lams[-1] == 50.0
        np.testing.assert_allclose(np.diff(lams), 5.0)


class TestBranchCommand:
    def test_single_point(self, tmp_path):
        assert run(["branch", "--grid", "64", "--lambda-max", "0"], tmp_path) == 0
        rows = read_rows(tmp_path / "branch_N2_p2_M64.csv")
        assert len(rows) == 1
        assert float(rows[0]["alpha"]) == 1.0 and float(rows[0]["lambda"]) == 0.0

    def test_crossing_lambda_plus(self, tmp_path):
        assert run(["branch", "-N", "3", "-p", "1.5", "--grid", "64", "--lambda-step", "5"], tmp_path) == 0
        summary = json.loads((tmp_path / "branch_N3_p1.5_M64.json").read_text())
        rows = read_rows(tmp_path / "branch_N3_p1.5_M64.csv")
        assert summary["schema"] == "plasmalab.sweep/1"
        assert summary["lambda_plus"] is not None and np.isfinite(summary["lambda_plus"])
        assert summary["alpha_decreasing"] and summary["energy_increasing"]
        assert list(rows[0]) == list(COLUMNS)
        assert all(float(r["sigma1"]) > 0 for r in rows)
        assert len(rows) == summary["points"]

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert cli.main(["branch", "--grid", "64", "--seed", "3", "--out", str(d)]) == 0
        for name in ("branch_N2_p2_M64.csv", "branch_N2_p2_M64.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_solver_failure_exit_code(self, tmp_path, monkeypatch, capsys):
        def boom(*args, **kwargs):
            raise NewtonDivergence("diverged", lam=7.25)

        monkeypatch.setattr(runner, "sweep", boom)
        assert run(["branch", "--grid", "64"], tmp_path) == cli.EXIT_SOLVER
        assert "lambda=7.25" in capsys.readouterr().err


class TestValidation:
    @pytest.mark.parametrize(
        "argv",
        [
            ["branch", "--grid", "16"],
            ["branch", "--exponent", "0.5"],
            ["branch", "-N", "3", "-p", "4"],
            ["branch", "--lmax", "1"],
            ["verify", "--checks", "nope"],
            ["verify", "--tolerance", "multiplier_identity"],
            ["verify", "--tolerance", "kernel_structure.bogus=1"],
            ["sobolev", "-N", "3", "--t", "6.5"],
            ["spectrum", "--lambda", "-1"],
            ["spectrum", "--k", "11"],
            ["nonsense"],
            ["branch", "--grid", "abc"],
        ],
    )
    def test_config_error_before_work(self, argv, tmp_path, monkeypatch):
        def forbidden(*args, **kwargs):
            raise AssertionError("computation started on an invalid config")

        for name in ("run_sweep",):
            monkeypatch.setattr(runner, name, forbidden)
        for name in list(cli.COMMANDS):
            monkeypatch.setitem(cli.COMMANDS, name, forbidden)
        assert run(argv, tmp_path) == cli.EXIT_CONFIG
        assert not any(tmp_path.iterdir())

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("grid = 64\nlambda_max = 0\n")
        out = tmp_path / "out"
        assert cli.main(["branch", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "branch_N2_p2_M64.csv").exists()

    def test_env_out(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PLASMALAB_OUT", str(tmp_path / "env"))
        assert cli.main(["lambda-plus"]) == 0
        assert (tmp_path / "env" / "lambda_plus_N2_p2_M1024.json").exists()


class TestOtherCommands:
    def test_emden(self, tmp_path, capsys):
        assert run(["emden", "-p", "2"], tmp_path) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["schema"] == "plasmalab.emden/1"
        assert out["lambda_plus"] == pytest.approx(lambda_plus(ProblemParams(2, 2.0)), rel=1e-12)
        assert (tmp_path / "emden_profile_N2_p2.csv").exists()

    def test_lambda_plus(self, tmp_path, capsys):
        assert run(["lambda-plus", "-N", "3", "-p", "2", "--grid", "256"], tmp_path) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["relative_gap"] <= 1e-3

    def test_spectrum(self, tmp_path, capsys):
        assert run(["spectrum", "--grid", "64", "--lambda-factor", "1.5", "--k", "2"], tmp_path) == 0
        out = json.loads(capsys.readouterr().out)
        assert set(out["sectors"]) == {"0", "1", "2"}
        assert out["sigma1"] > 0 and out["alpha"] < 0 and not out["kernel"]["empty"]

    def test_sobolev(self, tmp_path, capsys):
        assert run(["sobolev", "--grid", "256", "--t", "2"], tmp_path) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["lambda0"] < out["lambda_plus"]
        assert out["best_constant"]["mismatch"] <= 1e-3

    def test_variational(self, tmp_path, capsys):
        assert run(["variational", "--grid", "128", "--lambda-factor", "0.5"], tmp_path) == 0
        out = json.loads(capsys.readouterr().out)
        assert set(out["starts"]) == {"uniform", "warm", "bump"}
        assert all(s["l1_to_newton"] <= 1e-3 for s in out["starts"].values())
        assert out["min_second_variation"] >= -1e-8


class TestVerify:
    def test_corrupted_tolerance_isolated(self, tmp_path, capsys):
        code = run(
            ["verify", "--grid", "64", "--checks", "multiplier_identity,eigen_identity,lambda0_strict",
             "--tolerance", "multiplier_identity=0"],
            tmp_path,
        )
        assert code == cli.EXIT_CHECKS
        report = json.loads((tmp_path / "verify.json").read_text())
        assert report["schema"] == "plasmalab.verify/1"
        status = {c["id"]: c["status"] for c in report["checks"]}
        assert status == {"multiplier_identity": "fail", "eigen_identity": "pass", "lambda0_strict": "pass"}
        lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("[")]
        assert len(lines) == 3

    def test_every_enabled_check_reported_once(self):
        cfg = build_config(env={}, grid=64, checks=("lambda0_strict", "disc_equality"))
        report = run_verify(cfg)
        assert [r.id for r in report.results] == ["lambda0_strict", "disc_equality"]
        assert report.passed and report.exit_code == 0
        for r in report.results:
            assert r.runtime >= 0 and r.tolerance == CHECKS[r.id].tolerances

    def test_bundle_error_only_hits_dependents(self, monkeypatch):
        from plasmalab import verify

        def broken(*args):
            raise RuntimeError("bundle exploded")

        monkeypatch.setattr(verify, "threshold_bundle", broken)
        cfg = build_config(env={}, grid=64, checks=("lambda0_strict", "multiplier_identity"))
        report = run_verify(cfg)
        status = {r.id: r.status for r in report.results}
        assert status == {"lambda0_strict": "error", "multiplier_identity": "pass"}
        assert "bundle exploded" in report.results[0].message


def test_unordered_sector_minima_abort(tmp_path, monkeypatch, capsys):
    def fake_sigma1(grid, params, point, l_max=2, k=1, pot=None):
        return 1.0, 1, False, [2.0, 1.0, 0.5]

    monkeypatch.setattr(runner, "sigma1", fake_sigma1)
    assert run(["branch", "--grid", "64", "--lambda-max", "0"], tmp_path) == cli.EXIT_SOLVER
    assert "sector minima" in capsys.readouterr().err
