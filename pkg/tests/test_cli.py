import json

import numpy as np
import pytest

from todlab import cli, nnet
from todlab.io import read_csv

SMALL = {
    "dataset": {"kind": "two_moons", "n": 200, "n_test": 100},
    "network": {"hidden": [8]},
    "train": {"epochs": 2, "batch_size": 16, "unsup_batch_size": 16},
}


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


@pytest.fixture
def run_dir(tmp_path, config_path):
    out = tmp_path / "exp"
    assert cli.main(["run", str(config_path), "--out", str(out), "--seeds", "0"]) == 0
    return out


class TestRun:
    def test_outputs(self, run_dir):
        rows = read_csv(run_dir / "cod_seed0" / "cycles.csv")
        assert len(rows) == 7
        assert [r["cycle"] for r in rows] == [str(c) for c in range(1, 8)]
        assert (run_dir / "manifest.json").exists()
        assert not (run_dir / "cod_seed0" / "INCOMPLETE").exists()

    def test_labeled_fraction_schedule(self, run_dir):
        rows = read_csv(run_dir / "cod_seed0" / "cycles.csv")
        got = [float(r["labeled_fraction"]) for r in rows]
        assert np.allclose(got, [0.10 + 0.05 * c for c in range(7)])

    def test_rerun_byte_identical(self, tmp_path, config_path, run_dir):
        other = tmp_path / "again"
        assert cli.main(["run", str(config_path), "--out", str(other), "--seeds", "0"]) == 0
        for name in ("cycles.csv", "selections.csv", "model_c7.txt"):
            assert (other / "cod_seed0" / name).read_bytes() == (run_dir / "cod_seed0" / name).read_bytes()

    def test_unknown_strategy(self, tmp_path, config_path, capsys):
        code = cli.main(["run", str(config_path), "--out", str(tmp_path / "x"), "--strategy", "entropy"])
        assert code == 2
        assert "random, cod, emaod" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({**SMALL, "lr": 0.1}))
        assert cli.main(["run", str(p), "--out", str(tmp_path / "x")]) == 2
        assert "lr" in capsys.readouterr().err

    def test_bad_schedule(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({**SMALL, "num_cycles": 30}))
        assert cli.main(["run", str(p), "--out", str(tmp_path / "x")]) == 2

    def test_missing_config(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) == 3

    def test_config_echo_round_trips(self, run_dir):
        echoed = json.loads((run_dir / "config.json").read_text())
        assert echoed["train"]["lambda"] == 0.05
        assert echoed["dataset"]["n"] == 200

    def test_output_root_env(self, tmp_path, config_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
        assert cli.main(["run", str(config_path), "--strategy", "random"]) == 0
        assert (tmp_path / "root" / "experiment" / "random_seed0" / "cycles.csv").exists()


class TestVerifyBounds:
    def test_zero_trials(self, tmp_path):
        assert cli.main(["verify-bounds", "--trials", "0", "--out", str(tmp_path)]) == 2

    def test_small_sweep_passes(self, tmp_path, capsys):
        code = cli.main(["verify-bounds", "--eta", "1e-3", "--T", "1", "2", "--trials", "50",
                         "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "remark1" in out and "pass_rate=1.0000" in out
        rows = read_csv(tmp_path / "bounds.csv")
        assert len(rows) == 150
        assert all(r["passed"] == "true" for r in rows)

    def test_bad_widths(self, tmp_path):
        assert cli.main(["verify-bounds", "--widths", "2", "3", "--out", str(tmp_path)]) == 2


class TestLossQuality:
    def test_writes_tables(self, run_dir):
        d = run_dir / "cod_seed0"
        assert cli.main(["loss-quality", str(d), "3", "--num-buckets", "5"]) == 0
        out = d / "loss_quality_c3"
        assert len(read_csv(out / "buckets.csv")) == 5
        assert len(read_csv(out / "capture.csv")) == 20
        summary = read_csv(out / "summary.csv")[0]
        assert -1.0 <= float(summary["spearman"]) <= 1.0

    def test_gd_steps(self, run_dir):
        d = run_dir / "cod_seed0"
        assert cli.main(["loss-quality", str(d), "2", "--gd-steps", "3", "--num-buckets", "4"]) == 0
        assert (d / "loss_quality_c2_gd3" / "summary.csv").exists()

    def test_missing_snapshot(self, run_dir):
        d = run_dir / "cod_seed0"
        (d / "model_c2.txt").unlink()
        assert cli.main(["loss-quality", str(d), "3"]) == 4

    def test_identical_models_undefined(self, run_dir):
        d = run_dir / "cod_seed0"
        (d / "model_c2.txt").write_bytes((d / "model_c3.txt").read_bytes())
        assert cli.main(["loss-quality", str(d), "3", "--num-buckets", "4"]) == 0
        assert read_csv(d / "loss_quality_c3" / "summary.csv")[0]["spearman"] == "undefined"

    def test_perfect_scores(self, tmp_path, rng):
        losses = rng.exponential(size=200)
        s = cli.write_loss_quality(tmp_path, losses, losses, 1, 0, 10, 0.25)
        assert s["spearman"] == pytest.approx(1.0)
        assert s["capture_at_top_loss_fraction"] == 1.0


class TestReport:
    def test_aggregates(self, tmp_path, config_path):
        out = tmp_path / "exp"
        assert cli.main(["run", str(config_path), "--out", str(out), "--seeds", "0", "1",
                         "--strategy", "cod", "random"]) == 0
        assert cli.main(["report", str(out)]) == 0
        rows = read_csv(out / "report.csv")
        assert len(rows) == 14
        assert {r["strategy"] for r in rows} == {"cod", "random"}
        assert all(r["seeds"] == "2" for r in rows)

    def test_empty_root(self, tmp_path):
        assert cli.main(["report", str(tmp_path)]) == 4


def test_snapshot_files_load(run_dir):
    s = nnet.load_snapshot(run_dir / "cod_seed0" / "model_c7.txt")
    assert s.spec.layer_widths == (2, 8, 2)
