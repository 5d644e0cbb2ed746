import json
import math

import numpy as np
import pytest

from intersubject import io
from intersubject.cli import main
from intersubject.inference import normal_quantile


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--d", 12, "--s", 3, "--n", 80, "--n-val", 40, "--seed", 7,
               "--out-dir", out) == 0
    return out


def same_outputs(a, b):
    manifest = json.loads((a / "manifest.json").read_text())
    return all((a / f).read_bytes() == (b / f).read_bytes() for f in manifest["outputs"])


class TestSimulate:
    def test_files(self, tmp_path):
        assert run("simulate", "--d", 30, "--s", 10, "--n", 100, "--seed", 7,
                   "--out-dir", tmp_path) == 0
        for name in ("sigma.csv", "omega.csv", "theta_star.csv", "support.json", "data.csv",
                     "manifest.json", "partition.json"):
            assert (tmp_path / name).exists()
        assert io.read_matrix_csv(tmp_path / "data.csv").shape == (100, 30)
        manifest = io.read_json(tmp_path / "manifest.json")
        assert manifest["config"]["cond"] == 30.0
        assert manifest["results"]["raw_condition_number"] == pytest.approx(30.0)
        assert manifest["defaults"]["alpha"] == 0.05
        assert len(io.read_json(tmp_path / "support.json")["support"]) == 10

    def test_three_groups(self, tmp_path):
        assert run("simulate", "--d", 12, "--s", 2, "--n", 10, "--L", 3,
                   "--out-dir", tmp_path) == 0
        assert len(io.read_json(tmp_path / "partition.json")["groups"]) == 3

    def test_invalid_flags(self, tmp_path):
        assert run("simulate", "--d", 3, "--s", 1, "--n", 10, "--out-dir", tmp_path) == 2
        assert run("simulate", "--d", 10, "--s", 1, "--n", 1, "--out-dir", tmp_path) == 2
        with pytest.raises(SystemExit) as info:
            run("simulate", "--d", "ten", "--s", 1, "--n", 10, "--out-dir", tmp_path)
        assert info.value.code == 2


class TestEstimate:
    def test_single_lambda(self, sim, tmp_path):
        assert run("estimate", "--data", sim / "data.csv", "--partition", sim / "partition.json",
                   "--lambda", 0.3, "--out-dir", tmp_path) == 0
        fit = io.read_json(tmp_path / "fit.json")
        assert fit["lambda"] == 0.3
        assert not (tmp_path / "selection.json").exists()
        assert io.read_matrix_csv(tmp_path / "theta_hat.csv").shape == (12, 12)

    def test_grid_with_validation(self, sim, tmp_path):
        assert run("estimate", "--data", sim / "data.csv", "--partition", sim / "partition.json",
                   "--val-data", sim / "val.csv", "--out-dir", tmp_path) == 0
        sel = io.read_json(tmp_path / "selection.json")
        assert sel["chosen_index"] == int(np.argmin(sel["val_losses"]))
        expect = np.linspace(0, 5, 50) * math.sqrt(math.log(12) / 80)
        assert np.allclose(sel["grid"], expect, rtol=0, atol=1e-15)

    def test_kendall(self, sim, tmp_path):
        assert run("estimate", "--data", sim / "data.csv", "--partition", sim / "partition.json",
                   "--lambda", 0.3, "--covariance", "kendall", "--out-dir", tmp_path) == 0

    def test_usage_errors(self, sim, tmp_path):
        base = ["estimate", "--data", sim / "data.csv", "--partition", sim / "partition.json"]
        assert run(*base, "--out-dir", tmp_path) == 2  # no lambda, no validation data
        assert run(*base, "--lambda", -1, "--out-dir", tmp_path) == 2
        assert run(*base, "--lambda", 0.1, "--rho", 0, "--out-dir", tmp_path) == 2
        assert run("estimate", "--data", tmp_path / "missing.csv", "--partition",
                   sim / "partition.json", "--lambda", 0.1, "--out-dir", tmp_path) == 2
        bad = tmp_path / "p.json"
        io.write_json(bad, {"groups": [[1, 2], [3, 4]]})
        assert run("estimate", "--data", sim / "data.csv", "--partition", bad,
                   "--lambda", 0.1, "--out-dir", tmp_path) == 2


class TestInfer:
    def test_outputs(self, sim, tmp_path):
        assert run("infer", "--data", sim / "data.csv", "--partition", sim / "partition.json",
                   "--lambda", 0.3, "--bonferroni", "--out-dir", tmp_path) == 0
        for name in ("theta_u.csv", "edges.csv", "inference.json", "selected_edges.csv"):
            assert (tmp_path / name).exists()
        lines = (tmp_path / "edges.csv").read_text().splitlines()
        assert lines[0] == "j,k,estimate,std_err,ci_low,ci_high,z,reject"
        assert len(lines) == 1 + 36
        manifest = io.read_json(tmp_path / "manifest.json")
        assert manifest["config"]["lambda_prime"] == pytest.approx(
            0.5 * math.sqrt(math.log(12) / 40))
        inf = io.read_json(tmp_path / "inference.json")
        assert inf["bonferroni_level"] == pytest.approx(4 * 0.05 / 144)
        # half-width uses the 0.975 quantile
        j, k, est, se, lo, hi = map(float, lines[1].split(",")[:6])
        assert (hi - lo) / 2 == pytest.approx(normal_quantile(0.975) * se, rel=1e-12)

    def test_clime_infeasible_is_numerical_failure(self, tmp_path, capsys):
        sim = tmp_path / "s"
        assert run("simulate", "--d", 30, "--s", 3, "--n", 20, "--seed", 2, "--out-dir", sim) == 0
        code = run("infer", "--data", sim / "data.csv", "--partition", sim / "partition.json",
                   "--lambda", 0.3, "--lambda-prime", 0.01, "--out-dir", tmp_path / "i")
        assert code == 1
        err = capsys.readouterr().err
        assert "row" in err and "try lambda'" in err

    def test_odd_rows(self, tmp_path):
        sim = tmp_path / "s"
        assert run("simulate", "--d", 8, "--s", 2, "--n", 21, "--out-dir", sim) == 0
        assert run("infer", "--data", sim / "data.csv", "--partition", sim / "partition.json",
                   "--lambda", 0.3, "--out-dir", tmp_path / "i") == 2


class TestHarnessCommands:
    def test_benchmark(self, tmp_path):
        args = ("benchmark", "--d", 10, "--s", 3, "--n-train", 40, "--n-val", 40, "--reps", 1,
                "--seed", 1)
        assert run(*args, "--out-dir", tmp_path / "a") == 0
        assert run(*args, "--out-dir", tmp_path / "b") == 0
        assert same_outputs(tmp_path / "a", tmp_path / "b")
        header, row = (tmp_path / "a" / "table.csv").read_text().splitlines()
        assert header == "d,s,precision,recall,f_score,failed"
        assert row.count("(") == 3

    def test_coverage(self, tmp_path):
        assert run("coverage", "--d", 8, "--s", 2, "--n", 40, "--reps", 3, "--lambda", 0.2,
                   "--tracked", "1,5;2,6", "--out-dir", tmp_path) == 0
        assert (tmp_path / "qq_1_5.csv").read_text().splitlines()[0] == "replication,z"
        assert (tmp_path / "qq_2_6.csv").exists()
        header, row = (tmp_path / "coverage.csv").read_text().splitlines()
        assert header == "d,s,avgcov_s,avgcov_sc,avglen_s,avglen_sc,failed"
        assert all(len(v.split(".")[1]) == 4 for v in row.split(",")[2:6])


class TestRerun:
    @pytest.mark.parametrize("argv", [
        ("simulate", "--d", 10, "--s", 2, "--n", 30, "--n-val", 10, "--seed", 3),
        ("benchmark", "--d", 8, "--s", 2, "--n-train", 30, "--n-val", 30, "--reps", 2),
        ("coverage", "--d", 8, "--s", 2, "--n", 30, "--reps", 2),
    ])
    def test_generated_commands(self, argv, tmp_path):
        assert run(*argv, "--out-dir", tmp_path / "a") == 0
        assert run("rerun", tmp_path / "a" / "manifest.json", "--out-dir", tmp_path / "b") == 0
        assert same_outputs(tmp_path / "a", tmp_path / "b")

    def test_file_commands(self, sim, tmp_path):
        common = ("--data", sim / "data.csv", "--partition", sim / "partition.json")
        for name, extra in (("estimate", ("--val-data", sim / "val.csv")),
                            ("infer", ("--lambda", 0.25, "--shuffle", "--seed", 4,
                                       "--bonferroni"))):
            a, b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
            assert run(name, *common, *extra, "--out-dir", a) == 0
            assert run("rerun", a / "manifest.json", "--out-dir", b) == 0
            assert same_outputs(a, b)

    def test_bad_manifest(self, tmp_path):
        io.write_json(tmp_path / "m.json", {"command": "nope", "config": {}})
        assert run("rerun", tmp_path / "m.json", "--out-dir", tmp_path / "x") == 2
