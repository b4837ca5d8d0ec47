"""Config loading, the CLI surface, and output schemas."""

from __future__ import annotations

import numpy as np
import pytest
import yaml

from dro.cli import main, parse_seeds, seed_csv_path
from dro.config import DEFAULTS, ConfigError, build_run_config, load_config
from dro.gp import NOISE_FLOOR

FAST_CFG = {
    "objective": {"dimension": 1, "noise_std": 0.0},
    "run": {"budget": 8, "n_cand": 64},
    "ensemble": {"size": 2, "gp_train_iters": 5},
    "rollout": {"max_len": 3, "rollouts_per_gp": 2},
    "transformer": {
        "embed_dim": 16, "n_layers": 1, "n_heads": 2, "seq_len": 3, "epochs": 3,
    },
}


def _write_cfg(tmp_path, overrides=None, name="cfg.yaml"):
    cfg = {k: dict(v) for k, v in FAST_CFG.items()}
    for section, vals in (overrides or {}).items():
        cfg.setdefault(section, {}).update(vals)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestConfig:
    def test_defaults_load_without_file(self):
        cfg = load_config(None)
        assert cfg == DEFAULTS

    def test_missing_keys_take_defaults(self, tmp_path):
        path = tmp_path / "partial.yaml"
        path.write_text("ensemble:\n  size: 3\n")
        cfg = load_config(path)
        assert cfg["ensemble"]["size"] == 3
        assert cfg["ensemble"]["lengthscale_min"] == 0.1
        assert cfg["transformer"]["epochs"] == 100

    def test_unknown_key_reports_path(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("rollout:\n  deltaa: 0.1\n")
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert "rollout.deltaa" in str(err.value)

    def test_unknown_top_level_key(self, tmp_path):
        path = tmp_path / "bad2.yaml"
        path.write_text("rollouts: {}\n")
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert "rollouts" in str(err.value)

    def test_noise_floor_is_pinned(self, tmp_path):
        path = tmp_path / "floor.yaml"
        path.write_text("gp:\n  noise_floor: 1.0e-3\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_build_run_config_derives_dims(self):
        cfg = load_config(None)
        rc = build_run_config(cfg, "DRO", seed=5)
        assert rc.dt.state_dim == 2 * 10 + 2 + 2
        assert rc.dt.action_dim == 2
        assert rc.seed == 5
        assert rc.rollout.acq.kappa_ucb == 2.0

    def test_bad_objective_name(self, tmp_path):
        path = tmp_path / "obj.yaml"
        path.write_text("objective:\n  name: sphere\n")
        cfg = load_config(path)
        with pytest.raises(ConfigError) as err:
            build_run_config(cfg, "DRO", 0)
        assert "objective.name" in str(err.value)


class TestSeedParsing:
    def test_single(self):
        assert parse_seeds("7") == [7]

    def test_range_inclusive(self):
        assert parse_seeds("0..3") == [0, 1, 2, 3]

    def test_bad_range(self):
        with pytest.raises(ValueError):
            parse_seeds("5..2")


class TestRunCommand:
    def test_fanout_writes_csvs_and_summary(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        out = tmp_path / "out"
        rc = main(["run", "--config", str(cfg), "--method", "RANDOM",
                   "--seeds", "0..2", "--out", str(out)])
        assert rc == 0
        for seed in (0, 1, 2):
            assert seed_csv_path(out, "RANDOM", seed).exists()
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == "iter,best_median,best_q1,best_q3,regret_median,regret_q1,regret_q3"
        assert len(summary) == 1 + 8  # budget rows

    def test_rerun_byte_identical(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        for out in (out1, out2):
            rc = main(["run", "--config", str(cfg), "--method", "DRO",
                       "--seeds", "0", "--out", str(out)])
            assert rc == 0
        b1 = seed_csv_path(out1, "DRO", 0).read_bytes()
        b2 = seed_csv_path(out2, "DRO", 0).read_bytes()
        assert b1 == b2

    def test_bad_config_exits_1(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("nonsense: {}\n")
        rc = main(["run", "--config", str(path), "--method", "RANDOM",
                   "--seeds", "0", "--out", str(tmp_path / "x")])
        assert rc == 1

    def test_unknown_method_exits_1(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        rc = main(["run", "--config", str(cfg), "--method", "TURBO",
                   "--seeds", "0", "--out", str(tmp_path / "x")])
        assert rc == 1

    def test_unknown_objective_exits_1(self, tmp_path):
        cfg = _write_cfg(tmp_path, overrides={"objective": {"name": "branin"}})
        rc = main(["run", "--config", str(cfg), "--method", "RANDOM",
                   "--seeds", "0", "--out", str(tmp_path / "x")])
        assert rc == 1

    def test_worker_env_fanout(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DRO_NUM_WORKERS", "2")
        cfg = _write_cfg(tmp_path)
        out = tmp_path / "par"
        rc = main(["run", "--config", str(cfg), "--method", "RANDOM",
                   "--seeds", "0..3", "--out", str(out)])
        assert rc == 0
        assert len(list(out.glob("random_seed*.csv"))) == 4

    def test_parallel_output_matches_serial(self, tmp_path, monkeypatch):
        cfg = _write_cfg(tmp_path)
        serial, parallel = tmp_path / "ser", tmp_path / "par"
        main(["run", "--config", str(cfg), "--method", "RANDOM",
              "--seeds", "0..2", "--out", str(serial)])
        monkeypatch.setenv("DRO_NUM_WORKERS", "3")
        main(["run", "--config", str(cfg), "--method", "RANDOM",
              "--seeds", "0..2", "--out", str(parallel)])
        for seed in (0, 1, 2):
            assert (
                seed_csv_path(serial, "RANDOM", seed).read_bytes()
                == seed_csv_path(parallel, "RANDOM", seed).read_bytes()
            )


class TestReportCommand:
    def test_merges_methods_and_seeds(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        out = tmp_path / "runs"
        main(["run", "--config", str(cfg), "--method", "RANDOM", "--seeds", "0..1",
              "--out", str(out)])
        main(["run", "--config", str(cfg), "--method", "GPBO_LOGEI", "--seeds", "0..1",
              "--out", str(out)])
        merged = tmp_path / "merged.csv"
        rc = main(["report", "--in", str(out), "--out", str(merged)])
        assert rc == 0
        lines = merged.read_text().strip().splitlines()
        assert lines[0] == "method,seed,iter,best,regret,mean_best,se_best,mean_regret,se_regret"
        assert len(lines) == 1 + 2 * 2 * 8  # methods x seeds x budget
        methods = {line.split(",")[0] for line in lines[1:]}
        assert methods == {"RANDOM", "GPBO_LOGEI"}

    def test_standard_error_column(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        out = tmp_path / "runs"
        main(["run", "--config", str(cfg), "--method", "RANDOM", "--seeds", "0..3",
              "--out", str(out)])
        merged = tmp_path / "m.csv"
        main(["report", "--in", str(out), "--out", str(merged)])
        lines = merged.read_text().strip().splitlines()[1:]
        # verify se_best = sample std / sqrt(n) for the first iteration group
        rows = [ln.split(",") for ln in lines if ln.split(",")[2] == "1"]
        bests = np.array([float(r[3]) for r in rows])
        want = np.std(bests, ddof=1) / np.sqrt(len(bests))
        assert float(rows[0][6]) == pytest.approx(want, rel=1e-12)

    def test_single_seed_se_empty(self, tmp_path):
        cfg = _write_cfg(tmp_path)
        out = tmp_path / "runs"
        main(["run", "--config", str(cfg), "--method", "RANDOM", "--seeds", "5",
              "--out", str(out)])
        merged = tmp_path / "m.csv"
        main(["report", "--in", str(out), "--out", str(merged)])
        first = merged.read_text().strip().splitlines()[1].split(",")
        assert first[6] == ""  # se_best

    def test_empty_dir_exits_1(self, tmp_path):
        rc = main(["report", "--in", str(tmp_path), "--out", str(tmp_path / "x.csv")])
        assert rc == 1


class TestValidateCommand:
    def test_emits_report_csv(self, tmp_path):
        out = tmp_path / "oracles.csv"
        rc = main(["validate", "--out", str(out), "--seed", "0"])
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "name,max_abs_err,max_rel_err,n_cases,pass"
        assert len(lines) > 4
        assert rc == 0
        assert all(line.endswith(",true") for line in lines[1:])
