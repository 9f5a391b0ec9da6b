"""Command-line interface: subcommands, reports, determinism, exit codes."""

import json
from pathlib import Path

import numpy as np
import pytest

from likpivot.cli import run


def _read(path: Path) -> dict:
    return json.loads(path.read_text())


@pytest.fixture
def y_csv(tmp_path):
    p = tmp_path / "y.csv"
    p.write_text("y\n1.0\n2.0\n3.0\n")
    return p


class TestPivotCommand:
    def test_signed_root_report(self, tmp_path, y_csv):
        out = tmp_path / "rep.json"
        code = run([
            "pivot", "--model", "normal-mv", "--data", str(y_csv), "--psi0", "0",
            "--pivot", "r", "--seed", "11", "--b", "600", "--out", str(out),
        ])
        assert code == 0
        rep = _read(out)
        assert set(rep) == {"version", "config", "seeds", "results", "diagnostics"}
        assert rep["results"]["pivots"]["r"]["value"] == pytest.approx(
            np.sqrt(3 * np.log(7)), abs=1e-4
        )
        assert 0.0 < rep["results"]["pivots"]["r"]["bootstrap_pvalue"] < 1.0
        # timestamps live in the sidecar, not the report
        assert "created_unix" not in json.dumps(rep)
        meta = _read(Path(str(out) + ".meta.json"))
        assert "created_unix" in meta

    def test_config_file_with_flag_override(self, tmp_path, y_csv):
        conf = tmp_path / "conf.json"
        conf.write_text(json.dumps({
            "model": "normal-mv", "data": str(y_csv), "psi0": 0.0,
            "pivot": "r", "b": 600, "seed": 3,
        }))
        out = tmp_path / "rep.json"
        code = run(["pivot", "--config", str(conf), "--seed", "11", "--out", str(out)])
        assert code == 0
        assert _read(out)["config"]["seed"] == 11  # flag wins over file


class TestFitCommand:
    def test_exponential_closed_form(self, tmp_path):
        data = tmp_path / "e.csv"
        data.write_text("y\n" + "\n".join(["0.4", "0.5", "0.6"]) + "\n")
        out = tmp_path / "fit.json"
        code = run(["fit", "--model", "exponential", "--data", str(data),
                    "--seed", "1", "--out", str(out)])
        assert code == 0
        assert _read(out)["results"]["theta_hat"][0] == pytest.approx(2.0)

    def test_simulation_source(self, tmp_path):
        out = tmp_path / "fit.json"
        code = run(["fit", "--model", "gamma", "--theta", "3,1.5", "--n", "100",
                    "--seed", "2", "--out", str(out)])
        assert code == 0
        rep = _read(out)
        assert rep["diagnostics"]["input"]["source"] == "simulated"

    def test_both_sources_rejected(self, tmp_path, y_csv):
        code = run(["fit", "--model", "normal-mv", "--data", str(y_csv),
                    "--theta", "0,1", "--n", "30", "--seed", "2",
                    "--out", str(tmp_path / "x.json")])
        assert code == 2


class TestConditionCommands:
    def test_equiv_check_pair(self, tmp_path):
        out = tmp_path / "eq.json"
        code = run(["equiv-check", "--pair", "r,wo", "--model", "normal-mv",
                    "--theta", "0,1", "--n", "50", "--seed", "4", "--out", str(out)])
        assert code == 0
        res = _read(out)["results"]
        assert res["both_pass"] is True

    def test_equiv_check_failing_pair(self, tmp_path):
        out = tmp_path / "eq.json"
        run(["equiv-check", "--pair", "r,we", "--model", "normal-mv",
             "--theta", "0,1", "--n", "50", "--seed", "4", "--out", str(out)])
        assert _read(out)["results"]["both_pass"] is False

    def test_stability_check_patterns(self, tmp_path):
        out = tmp_path / "st.json"
        code = run(["stability-check", "--model", "gamma", "--theta", "3,1.5",
                    "--n", "50", "--seed", "5", "--out", str(out)])
        assert code == 0
        kinds = _read(out)["results"]["kinds"]
        assert kinds["r"]["passed"] and kinds["wo"]["passed"]
        assert not kinds["we"]["passed"] and not kinds["se"]["passed"]


class TestExperimentCommands:
    def test_verify_order_with_tables_and_plot(self, tmp_path):
        out = tmp_path / "vo.json"
        code = run(["verify-order", "--pair", "r,wo", "--model", "normal-mv",
                    "--theta", "0,1", "--n-grid", "20,40,80", "--outer", "200",
                    "--mode", "cf", "--seed", "6", "--out", str(out), "--plot"])
        assert code == 0
        rep = _read(out)
        assert rep["results"]["verdict"] in ("pass", "fail", "inconclusive", "exact")
        assert (tmp_path / "vo_table.csv").exists()
        assert (tmp_path / "vo_slope.png").exists()
        header = (tmp_path / "vo_table.csv").read_text().splitlines()[0]
        assert header == "n,metric,mc_se"

    def test_verify_uniformity_control(self, tmp_path):
        out = tmp_path / "vu.json"
        code = run(["verify-uniformity", "--model", "exponential", "--theta", "2",
                    "--n", "20", "--outer", "200", "--b", "600", "--control",
                    "--seed", "7", "--out", str(out), "--plot"])
        assert code == 0
        assert _read(out)["results"]["passed"] is False
        assert (tmp_path / "vu_pvalues.csv").exists()
        assert (tmp_path / "vu_ecdf.png").exists()

    @pytest.mark.slow
    def test_verify_stability_subcommand(self, tmp_path):
        out = tmp_path / "vs.json"
        code = run(["verify-stability", "--pivot", "r", "--model", "ls-normal",
                    "--theta", "0,1", "--n-grid", "10,20,40", "--configs", "200",
                    "--grid-points", "51", "--seed", "12", "--threads", "4",
                    "--out", str(out)])
        assert code == 0
        rep = _read(out)
        assert rep["results"]["r"]["verdict"] in ("exact", "inconclusive", "pass")
        assert (tmp_path / "vs_r_table.csv").exists()

    def test_bartlett_command(self, tmp_path):
        out = tmp_path / "ba.json"
        code = run(["bartlett", "--model", "mvn-mean", "--q", "3",
                    "--theta", "0,0,0", "--n", "20", "--reps", "2000",
                    "--seed", "8", "--out", str(out), "--plot"])
        assert code == 0
        res = _read(out)["results"]
        assert abs(res["factor"] - 1.0) < 0.1
        assert (tmp_path / "ba_qq.png").exists()


class TestDeterminism:
    def test_byte_identical_reports(self, tmp_path):
        args = ["verify-order", "--pair", "r,wo", "--model", "normal-mv",
                "--theta", "0,1", "--n-grid", "20,40,80", "--outer", "200",
                "--mode", "cf", "--seed", "9"]
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        assert run(args + ["--out", str(out1), "--threads", "1"]) == 0
        assert run(args + ["--out", str(out2), "--threads", "4"]) == 0
        a, b = out1.read_bytes(), out2.read_bytes()
        # normalize the fields that legitimately differ (out path, threads)
        ja, jb = json.loads(a), json.loads(b)
        for j in (ja, jb):
            j["config"].pop("out")
            j["config"].pop("threads")
        assert json.dumps(ja, sort_keys=True) == json.dumps(jb, sort_keys=True)

    def test_same_invocation_identical_bytes(self, tmp_path):
        args = ["pivot", "--model", "normal-mv", "--theta", "0,1", "--n", "25",
                "--psi0", "0", "--pivot", "r,wo", "--b", "600", "--seed", "10"]
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        assert run(args + ["--out", str(out1)]) == 0
        assert run(args + ["--out", str(out2)]) == 0
        ja, jb = _read(out1), _read(out2)
        ja["config"].pop("out"), jb["config"].pop("out")
        assert json.dumps(ja, sort_keys=True) == json.dumps(jb, sort_keys=True)


class TestExitCodes:
    def test_missing_seed(self, tmp_path, y_csv):
        code = run(["pivot", "--model", "normal-mv", "--data", str(y_csv),
                    "--psi0", "0", "--out", str(tmp_path / "x.json")])
        assert code == 2

    def test_unknown_model(self, tmp_path, y_csv):
        code = run(["fit", "--model", "weibull", "--data", str(y_csv),
                    "--seed", "1", "--out", str(tmp_path / "x.json")])
        assert code == 2

    def test_unknown_pivot_vocabulary(self, tmp_path, y_csv):
        code = run(["pivot", "--model", "normal-mv", "--data", str(y_csv),
                    "--psi0", "0", "--pivot", "rstar", "--seed", "1",
                    "--out", str(tmp_path / "x.json")])
        assert code == 2

    def test_numerical_failure_exit_3(self, tmp_path):
        # ybar^2 >> phi_hat: the constrained observed information is not
        # positive definite in the profile direction and WOC cannot be formed
        data = tmp_path / "bad.csv"
        data.write_text("y\n1.0\n1.01\n0.99\n")
        code = run(["pivot", "--model", "normal-mv", "--data", str(data),
                    "--psi0", "0", "--pivot", "woc", "--seed", "1", "--b", "600",
                    "--out", str(tmp_path / "x.json")])
        assert code == 3

    def test_unknown_subcommand(self):
        assert run(["frobnicate"]) == 2


class TestMcTensorFallback:
    def test_pivot_on_location_scale_uses_mc_tensors(self, tmp_path):
        out = tmp_path / "ls.json"
        code = run(["pivot", "--model", "ls-t", "--df", "5", "--theta", "0,1",
                    "--n", "25", "--psi0", "0", "--pivot", "r", "--b", "600",
                    "--tensor-reps", "2000", "--seed", "13", "--out", str(out)])
        assert code == 0
        rep = _read(out)
        assert rep["results"]["tensors"] == "mc[2000]"
        assert 0.0 < rep["results"]["pivots"]["r"]["cf_pvalue"] < 1.0
