import csv
import subprocess
import sys

import pytest

from hrc.cli import loglog_slope, main
from hrc.config import ExperimentConfig, load_config, parse_config
from hrc.graph import SubgoalGraph


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, command, *settings, seed=0):
    args = [command, "--out", str(tmp_path), "--seed", str(seed)]
    for s in settings:
        args += ["--set", s]
    return main(args)


class TestConfig:
    def test_defaults(self):
        assert parse_config("") == ExperimentConfig()

    def test_values(self):
        cfg = parse_config("family = semi-er  # comment\nn = 5, 10\nc = 0.2,0.8\n"
                           "error_schedule = yes\np = none\nmax_probes = 1_000\n")
        assert cfg.family == "semi-er" and cfg.n == [5, 10] and cfg.c == [0.2, 0.8]
        assert cfg.error_schedule is True and cfg.p is None and cfg.max_probes == 1000

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown key"):
            parse_config("colour = blue")

    def test_bad_bool(self):
        with pytest.raises(ValueError):
            parse_config("error_schedule = maybe")

    def test_missing_equals(self):
        with pytest.raises(ValueError):
            parse_config("family tree")

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("seeds = 4\nfamily = semi-er\n")
        cfg = load_config(path, ["seeds = 7"])
        assert cfg.seeds == 7 and cfg.family == "semi-er"


class TestGen:
    def test_tree(self, tmp_path):
        assert run(tmp_path, "gen", "n=13", "b=3", "seeds=1") == 0
        (row,) = read(tmp_path / "manifest.csv")
        g = SubgoalGraph.from_text((tmp_path / "graphs" / f"{row['graph_id']}.txt").read_text())
        assert len(g.edges) == 12 and row["edges"] == "12"

    def test_forced_zero_probability(self, tmp_path):
        assert run(tmp_path, "gen", "family=semi-er", "n=5", "p=0", "seeds=1") == 0
        assert read(tmp_path / "manifest.csv")[0]["edges"] == "0"

    def test_distinct_stable_names(self, tmp_path):
        run(tmp_path / "a", "gen", "family=semi-er", "n=20", "seeds=100")
        run(tmp_path / "b", "gen", "family=semi-er", "n=20", "seeds=100")
        ids = [r["graph_id"] for r in read(tmp_path / "a" / "manifest.csv")]
        assert len(set(ids)) == 100
        for gid in ids[:5]:
            a = (tmp_path / "a" / "graphs" / f"{gid}.txt").read_text()
            assert a == (tmp_path / "b" / "graphs" / f"{gid}.txt").read_text()


class TestSweep:
    SETTINGS = ("n=13,40,121", "b=3", "seeds=5", "strategies=random,causal-effect")

    def test_rows_and_slopes(self, tmp_path):
        assert run(tmp_path, "sweep", *self.SETTINGS) == 0
        rows = read(tmp_path / "sweep.csv")
        assert len(rows) == 3 * 2 * 5
        assert list(rows[0]) == ["family", "n", "c_or_b", "strategy", "seed", "cost", "c", "is_size", "success"]
        slopes = {r["strategy"]: float(r["slope"]) for r in read(tmp_path / "slopes.csv")}
        assert slopes["random"] > slopes["causal-effect"]
        assert (tmp_path / "sweep_plot.json").exists()

    def test_reproducible(self, tmp_path):
        run(tmp_path / "a", "sweep", *self.SETTINGS)
        run(tmp_path / "b", "sweep", *self.SETTINGS)
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()

    def test_deterministic_strategy_same_cost_across_seeds(self, tmp_path):
        run(tmp_path, "sweep", "n=40", "b=3", "seeds=4", "strategies=shortest-path")
        assert len({r["cost"] for r in read(tmp_path / "sweep.csv")}) == 1

    def test_resume_skips_finished_cells(self, tmp_path):
        run(tmp_path, "sweep", *self.SETTINGS)
        cell = next((tmp_path / "cells").glob("*random.csv"))
        stamp = cell.stat().st_mtime_ns
        assert run(tmp_path, "sweep", *self.SETTINGS) == 0
        assert cell.stat().st_mtime_ns == stamp

    def test_partial_failure_exit_code(self, tmp_path):
        assert run(tmp_path, "sweep", "n=13", "seeds=2", "strategies=random,bogus") == 2
        assert len(read(tmp_path / "sweep.csv")) == 2

    def test_slope_of_power_law(self):
        ns = [10, 100, 1000, 10000]
        assert loglog_slope(ns, [3 * n ** 1.5 for n in ns]) == pytest.approx(1.5)


class TestDiscoverEval:
    def test_oracle_exhaustive_is_exact(self, tmp_path):
        assert run(tmp_path, "discover-eval", "family=semi-er", "n=5", "seeds=5",
                   "engines=oracle", "data_mode=exhaustive", "lam_grid=0.001") == 0
        assert all(r["shd"] == "0" for r in read(tmp_path / "discover_eval.csv"))

    def test_hidden_edge(self, tmp_path):
        run(tmp_path, "discover-eval", "family=hidden-edge", "engines=oracle", "data_mode=exhaustive",
            "lam_grid=0.001")
        (row,) = read(tmp_path / "discover_eval.csv")
        assert row["shd"] == "0" and row["shd_raw"] == "1"

    def test_heavy_penalty(self, tmp_path):
        run(tmp_path, "discover-eval", "family=semi-er", "n=6", "seeds=3", "engines=oracle",
            "data_mode=exhaustive", "lam_grid=0.001,0.9")
        rows = read(tmp_path / "discover_eval.csv")
        by_lam = {lam: [r for r in rows if r["lam"] == lam] for lam in ("0.001", "0.9")}
        assert all(r["extra"] == "0" for r in by_lam["0.9"])
        assert sum(int(r["missing"]) for r in by_lam["0.9"]) >= sum(int(r["missing"]) for r in by_lam["0.001"])


class TestCostExact:
    def test_rows(self, tmp_path):
        assert run(tmp_path, "cost-exact", "family=semi-er", "n=6", "seeds=2", "runs=200",
                   "strategies=random,shortest-path") == 0
        rows = read(tmp_path / "cost_exact.csv")
        assert len(rows) == 4
        for r in rows:
            assert abs(float(r["mc_mean"]) - float(r["exact_cost"])) <= 3 * float(r["mc_stderr"]) + 1e-9

    def test_capacity_failure_exit_code(self, tmp_path):
        assert run(tmp_path, "cost-exact", "family=semi-er", "n=25", "seeds=1", "runs=5") == 2


class TestGridworld:
    def test_zero_budget(self, tmp_path):
        assert run(tmp_path, "gridworld", "seeds=1", "strategies=random", "max_probes=0") == 0
        (row,) = read(tmp_path / "gridworld_summary.csv")
        assert row["success"] == "0" and float(row["final_success_ratio"]) == 0

    def test_identical_seeds(self, tmp_path):
        run(tmp_path / "a", "gridworld", "seeds=1", "strategies=causal-effect")
        run(tmp_path / "b", "gridworld", "seeds=1", "strategies=causal-effect")
        a = (tmp_path / "a" / "gridworld.csv").read_text()
        assert a == (tmp_path / "b" / "gridworld.csv").read_text()
        assert float(read(tmp_path / "a" / "gridworld_summary.csv")[0]["final_success_ratio"]) >= 0.9


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hrc", "gen", "--out", str(tmp_path), "--set", "seeds=1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "manifest.csv").exists()
