import json
import os

import numpy as np
import pytest

from nvcssl.cli import build_parser, main
from nvcssl.data_model import load_long_csv, write_long_csv

from test_em_fitters import small_dataset


@pytest.fixture()
def train_csv(tmp_path):
    ds = small_dataset(n=12, p=4, rho=0.4, seed=1)
    path = tmp_path / "train.csv"
    write_long_csv(ds, path)
    return path


def run_cli(*argv):
    return main([str(a) for a in argv])


FIT_FAST = ["--ladder", "5,20,100", "--atoms", "0,0.4,0.8", "--d", "4"]


class TestFit:
    def test_nvcssl_fit_outputs(self, tmp_path, train_csv):
        out = tmp_path / "out"
        code = run_cli("fit", "--input", train_csv, "--output-dir", out,
                       "--method", "nvcssl", "--structure", "ar1", *FIT_FAST)
        assert code == 0
        model = json.loads((out / "model.json").read_text())
        assert model["method"] == "nvcssl"
        assert len(model["selected"]) >= 1
        assert (out / "curves.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["d"] == 4

    def test_robustified_records_xi_and_eb(self, tmp_path, train_csv):
        out = tmp_path / "rob"
        code = run_cli("fit", "--input", train_csv, "--output-dir", out,
                       "--method", "robustified", "--xi", "0.8", "--working", "eb",
                       *FIT_FAST)
        assert code == 0
        model = json.loads((out / "model.json").read_text())
        assert model["xi"] == 0.8
        assert "eb_sigma2" in model["extras"] and "eb_rho" in model["extras"]

    def test_missing_input_exits_2(self, tmp_path, capsys):
        code = run_cli("fit", "--input", tmp_path / "nope.csv",
                       "--output-dir", tmp_path / "o")
        assert code == 2
        assert "nope.csv" in capsys.readouterr().err

    def test_baseline_fit(self, tmp_path, train_csv):
        out = tmp_path / "gl"
        code = run_cli("fit", "--input", train_csv, "--output-dir", out,
                       "--method", "glasso", "--d", "4")
        assert code == 0
        model = json.loads((out / "model.json").read_text())
        assert model["extras"]["penalty"]["kind"] == "glasso"


class TestPredict:
    def test_round_trip_on_training_rows(self, tmp_path, train_csv):
        out = tmp_path / "m"
        assert run_cli("fit", "--input", train_csv, "--output-dir", out,
                       "--method", "nvcssl", *FIT_FAST) == 0
        pred_path = tmp_path / "pred.csv"
        code = run_cli("predict", "--model", out / "model.json",
                       "--input", train_csv, "--output", pred_path)
        assert code == 0
        lines = pred_path.read_text().strip().splitlines()
        ds = load_long_csv(train_csv)
        assert len(lines) == 1 + ds.total_obs
        # fitted values reproduce the in-sample predictions
        from nvcssl.em_fitters import load_model, predict
        from nvcssl.spline_basis import build_design
        from nvcssl.data_model import center_response
        fit = load_model(out / "model.json")
        design = build_design(load_long_csv(train_csv), fit.basis)
        expected = predict(fit, design)
        got = np.array([float(l.split(",")[2]) for l in lines[1:]])
        assert np.max(np.abs(got - expected)) <= 1e-10

    def test_out_of_range_time_exits_2(self, tmp_path, train_csv, capsys):
        out = tmp_path / "m2"
        assert run_cli("fit", "--input", train_csv, "--output-dir", out,
                       "--method", "nvcssl", *FIT_FAST) == 0
        bad = tmp_path / "bad.csv"
        bad.write_text("subject,time,y,x1,x2,x3,x4\nzz,999.0,0.0,1,1,1,1\n")
        code = run_cli("predict", "--model", out / "model.json",
                       "--input", bad, "--output", tmp_path / "p.csv")
        assert code == 2
        assert "999" in capsys.readouterr().err


class TestSimulate:
    def test_outputs_and_determinism(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            code = run_cli("simulate", "--scenario", "s61", "--seed", "9",
                           "--n", "6", "--p", "12", "--n-test", "3",
                           "--output-dir", out)
            assert code == 0
        assert (out1 / "train.csv").read_text() == (out2 / "train.csv").read_text()
        assert (out1 / "test.csv").read_text() == (out2 / "test.csv").read_text()
        truth = json.loads((out1 / "truth.json").read_text())
        assert truth["support"] == ["x1", "x2", "x3", "x4", "x5", "x6"]

    def test_default_p_is_400(self, tmp_path):
        out = tmp_path / "big"
        code = run_cli("simulate", "--scenario", "s61", "--seed", "1",
                       "--n", "3", "--n-test", "0", "--output-dir", out)
        assert code == 0
        ds = load_long_csv(out / "train.csv")
        assert ds.p == 400

    def test_p_override(self, tmp_path):
        out = tmp_path / "small"
        code = run_cli("simulate", "--scenario", "s61", "--seed", "1",
                       "--n", "3", "--p", "100", "--n-test", "0", "--output-dir", out)
        assert code == 0
        assert load_long_csv(out / "train.csv").p == 100

    def test_unknown_scenario_exits_2(self, tmp_path):
        code = run_cli("simulate", "--scenario", "s99", "--output-dir", tmp_path / "x")
        assert code == 2

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NVCSSL_SEED", "77")
        out1 = tmp_path / "env"
        assert run_cli("simulate", "--scenario", "s61", "--n", "3", "--p", "8",
                       "--n-test", "0", "--output-dir", out1) == 0
        out2 = tmp_path / "explicit"
        assert run_cli("simulate", "--scenario", "s61", "--seed", "77", "--n", "3",
                       "--p", "8", "--n-test", "0", "--output-dir", out2) == 0
        assert (out1 / "train.csv").read_text() == (out2 / "train.csv").read_text()


class TestBench:
    def test_smoke_config(self, tmp_path):
        cfg = tmp_path / "bench.cfg"
        out = tmp_path / "results.csv"
        cfg.write_text(
            "scenario = s61\nn = 10\np = 8\nrho = 0.4\nmethods = glasso\n"
            f"reps = 2\nseed = 3\nd = 4\nthreads = 1\noutput = {out}\n"
        )
        code = run_cli("bench", "--config", cfg)
        assert code == 0
        lines = [l for l in out.read_text().splitlines() if l and not l.startswith("#")]
        assert len(lines) == 1 + 2 + 2  # header + 2 reps + mean/sd
        assert "# methods = glasso" in out.read_text()

    def test_malformed_config_exits_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("scenario = s61\nbogus = 1\n")
        assert run_cli("bench", "--config", cfg) == 2

    def test_missing_output_exits_2(self, tmp_path):
        cfg = tmp_path / "noout.cfg"
        cfg.write_text("scenario = s61\nn = 6\np = 8\nmethods = glasso\nreps = 1\n")
        assert run_cli("bench", "--config", cfg) == 2


class TestHelp:
    @pytest.mark.parametrize("sub", ["fit", "predict", "simulate", "bench"])
    def test_help_lists_flags_with_defaults(self, sub, capsys):
        parser = build_parser()
        with pytest.raises(SystemExit):
            parser.parse_args([sub, "--help"])
        text = capsys.readouterr().out
        assert "--help" in text
        if sub == "fit":
            for flag in ("--method", "--structure", "--d", "--xi", "--ladder",
                         "--lambda1", "--atoms", "--seed", "--threads" if False else "--working"):
                assert flag in text
            assert "default" in text


class TestTimeRange:
    def test_fit_with_explicit_range_predicts_outside_observed_times(self, tmp_path, train_csv):
        out = tmp_path / "wide"
        code = run_cli("fit", "--input", train_csv, "--output-dir", out,
                       "--method", "nvcssl", "--time-range", "0:20", *FIT_FAST)
        assert code == 0
        model = json.loads((out / "model.json").read_text())
        assert model["basis"]["knots"][0] == 0.0
        assert model["basis"]["knots"][-1] == 20.0
        new = tmp_path / "new.csv"
        new.write_text("subject,time,y,x1,x2,x3,x4\nq,0.05,0.0,1,0,0,0\nq,19.9,0.0,1,0,0,0\n")
        assert run_cli("predict", "--model", out / "model.json",
                       "--input", new, "--output", tmp_path / "p.csv") == 0
