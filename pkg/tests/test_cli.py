"""Command-line interface: exit codes, config precedence, artifacts, determinism."""
import csv
import json
import os

import pytest

from conftest import polynomial_beta_map
from cpmfit.cli import main

LAWS = {
    0: (0.10, 0.10),
    1: (2.0, 0.8, -0.2),
    2: (0.95, 0.25),
    3: (1.1, 0.3, 0.1),
    4: (3.0, 0.5),
}

FAST_CONFIG = {
    "de_population": 10,
    "de_max_iters": 150,
    "pso_particles": 30,
    "pso_iters": 20,
    "local_max_iters": 2000,
}


def write_map_csv(path, speeds=(300, 400, 500), n_points=8):
    cpm = polynomial_beta_map(speeds, LAWS, n_points=n_points)
    rows = ["speed,m_dot,pi"]
    for sl in cpm.speedlines:
        for p in sl.points:
            rows.append(f"{sl.speed!r},{p.m_dot!r},{p.pi!r}")
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture
def map_csv(tmp_path):
    return write_map_csv(tmp_path / "map.csv")


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(FAST_CONFIG))
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestExitCodes:
    def test_fit_success(self, tmp_path, map_csv, config_file):
        out = tmp_path / "out"
        rc = main(["fit", str(map_csv), "--config", str(config_file),
                   "--out", str(out), "--seed", "0"])
        assert rc == 0
        for name in ("fit_results.csv", "beta_table.csv", "curves.svg"):
            assert (out / name).exists()
        rows = read_csv(out / "fit_results.csv")
        assert len(rows) == 4  # header + 3 speedlines
        assert all(r[5] == "OK" for r in rows[1:])

    def test_fit_partial_failure(self, tmp_path, config_file):
        # One speedline with constant pressure ratio cannot be fitted.
        src = tmp_path / "map.csv"
        write_map_csv(src, speeds=(300, 400, 500))
        with open(src, "a") as fh:
            for m in (0.1, 0.2, 0.3, 0.4):
                fh.write(f"600.0,{m},1.23\n")
        out = tmp_path / "out"
        rc = main(["fit", str(src), "--config", str(config_file),
                   "--out", str(out), "--seed", "0"])
        assert rc == 2
        rows = read_csv(out / "fit_results.csv")
        statuses = [r[5] for r in rows[1:]]
        assert statuses.count("FAILED") == 1
        assert statuses.count("OK") == 3

    def test_missing_input_file(self, tmp_path):
        rc = main(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path)])
        assert rc == 1

    def test_malformed_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("speed,m_dot,pi\n300,abc,1.8\n")
        rc = main(["fit", str(bad), "--out", str(tmp_path)])
        assert rc == 1

    def test_crossval_too_few_speedlines(self, tmp_path, config_file):
        src = write_map_csv(tmp_path / "two.csv", speeds=(300, 400))
        rc = main(["crossval", str(src), "--config", str(config_file),
                   "--out", str(tmp_path / "out")])
        assert rc == 1

    def test_predict_requires_target(self, map_csv, tmp_path):
        rc = main(["predict", str(map_csv), "--out", str(tmp_path)])
        assert rc == 1


class TestCrossval:
    def test_artifacts(self, tmp_path, map_csv, config_file):
        out = tmp_path / "out"
        rc = main(["crossval", str(map_csv), "--config", str(config_file),
                   "--out", str(out), "--seed", "0"])
        assert rc == 0
        for name in ("report.csv", "report.json", "summary.csv",
                     "beta_nodes.csv", "beta_poly.csv", "curves.svg"):
            assert (out / name).exists()
        report = json.loads((out / "report.json").read_text())
        assert len(report) == 3
        # Holding out an end speed leaves the target outside the remaining span.
        kinds = [r["kind"] for r in report]
        assert kinds == ["EXTRAPOLATION", "INTERPOLATION", "EXTRAPOLATION"]
        nodes = read_csv(out / "beta_nodes.csv")
        assert nodes[0] == ["speed", "m_zs", "pi_zs", "m_ch", "pi_ch", "cur"]
        assert len(nodes) == 4
        poly = read_csv(out / "beta_poly.csv")
        assert len(poly) == 101  # header + 100 samples

    def test_determinism(self, tmp_path, map_csv, config_file):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            rc = main(["crossval", str(map_csv), "--config", str(config_file),
                       "--out", str(out), "--seed", "11"])
            assert rc == 0
            outs.append(out)
        for name in ("report.csv", "report.json", "summary.csv", "curves.svg"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


class TestPredict:
    def test_holdout_target(self, tmp_path, map_csv, config_file):
        out = tmp_path / "out"
        rc = main(["predict", str(map_csv), "--target", "400",
                   "--config", str(config_file), "--out", str(out), "--seed", "0"])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report[0]["status"] == "OK"
        assert (out / "curves.svg").exists()

    def test_pure_prediction(self, tmp_path, map_csv, config_file):
        out = tmp_path / "out"
        rc = main(["predict", str(map_csv), "--target", "450",
                   "--config", str(config_file), "--out", str(out), "--seed", "0"])
        assert rc == 0
        payload = json.loads((out / "prediction.json").read_text())
        assert payload["status"] == "OK"
        assert payload["no_ground_truth"] is True
        assert set(payload["beta"]) == {"m_zs", "pi_zs", "m_ch", "pi_ch", "cur"}
        curve = read_csv(out / "prediction_curve.csv")
        assert curve[0] == ["m_dot", "pi"]
        assert len(curve) == 201


class TestConfigPrecedence:
    def test_flag_overrides_config_seed(self, tmp_path, map_csv):
        cfg = dict(FAST_CONFIG, seed=5)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out_flag = tmp_path / "flag"
        out_plain = tmp_path / "plain"
        main(["fit", str(map_csv), "--config", str(cfg_path),
              "--seed", "7", "--out", str(out_flag)])
        cfg_path7 = tmp_path / "cfg7.json"
        cfg_path7.write_text(json.dumps(dict(FAST_CONFIG, seed=7)))
        main(["fit", str(map_csv), "--config", str(cfg_path7), "--out", str(out_plain)])
        assert (out_flag / "beta_table.csv").read_bytes() == \
            (out_plain / "beta_table.csv").read_bytes()

    def test_env_seed_fallback(self, tmp_path, map_csv, config_file, monkeypatch):
        out_env = tmp_path / "env"
        out_flag = tmp_path / "flag"
        monkeypatch.setenv("CPMFIT_SEED", "13")
        main(["fit", str(map_csv), "--config", str(config_file), "--out", str(out_env)])
        monkeypatch.delenv("CPMFIT_SEED")
        main(["fit", str(map_csv), "--config", str(config_file),
              "--seed", "13", "--out", str(out_flag)])
        assert (out_env / "beta_table.csv").read_bytes() == \
            (out_flag / "beta_table.csv").read_bytes()

    def test_init_flag(self, tmp_path, map_csv, config_file):
        out = tmp_path / "out"
        rc = main(["fit", str(map_csv), "--config", str(config_file),
                   "--init", "none", "--out", str(out), "--seed", "0"])
        assert rc == 0


class TestBench:
    def test_artifacts_and_flags(self, tmp_path, config_file):
        src = write_map_csv(tmp_path / "one.csv", speeds=(300, 400, 500))
        out = tmp_path / "out"
        rc = main(["bench", str(src), "--config", str(config_file),
                   "--repeats", "1", "--out", str(out), "--seed", "0"])
        assert rc == 0
        rows = read_csv(out / "bench.csv")
        assert rows[0] == ["strategy", "speed", "repeat", "seed",
                           "rmse", "max_err", "ortho", "status"]
        assert len(rows) == 1 + 3 * 3  # 3 strategies x 3 lines x 1 repeat
        summary = read_csv(out / "bench_summary.csv")
        assert {r[0] for r in summary[1:]} == {"none", "pso", "de"}
        # Single repeat: across-repeat spread is undefined.
        assert all(r[7] == "sd_undefined" for r in summary[1:])
