"""Command-line experiment harness: gen, sweep, discover-eval, cost-exact, gridworld."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .ascm import AscmConfig, AscmEnv, collect_interventional
from .config import ExperimentConfig, load_config
from .cost import CostParams, expected_cost_exact, monte_carlo_cost, path_cost
from .framework import HrcConfig, run_hrc
from .graph import (
    SubgoalGraph,
    assign_kinds,
    discoverable_graph,
    gen_semi_er,
    gen_tree,
    shd,
)
from .gridworld import DEFAULT_LAYOUT
from .policy import GridConfig, GridTask
from .scenarios import hidden_edge
from .search import graph_search
from .ssd import discover, fit_graph, sampled_design, valid_assignment_design

log = logging.getLogger("hrc")

SWEEP_HEADER = ["family", "n", "c_or_b", "strategy", "seed", "cost", "c", "is_size", "success"]
SLOPE_HEADER = ["family", "c_or_b", "strategy", "slope", "n_used"]
MANIFEST_HEADER = ["graph_id", "family", "n", "c_or_b", "seed", "edges", "ancestors_of_final"]
DISCOVER_HEADER = ["graph_id", "engine", "lam", "missing", "extra", "shd", "shd_raw"]
COST_HEADER = ["graph_id", "n", "c_or_b", "strategy", "exact_cost", "mc_mean", "mc_stderr", "runs"]
GRID_HEADER = ["strategy", "seed", "iteration", "probes", "success_ratio"]
GRID_SUMMARY_HEADER = ["strategy", "seed", "success", "probes", "final_success_ratio"]
SLOPE_POINTS = 3


def derive_seed(base: int, *parts) -> int:
    """Stable 63-bit seed for a named sub-experiment."""
    tag = zlib.crc32("|".join(map(str, parts)).encode())
    return int(np.random.SeedSequence([base & (2**64 - 1), tag]).generate_state(2, np.uint64)[0] >> 1)


def family_params(cfg: ExperimentConfig) -> list:
    if cfg.family == "tree":
        return list(cfg.b)
    if cfg.family == "semi-er":
        return list(cfg.c)
    raise ValueError(f"unknown graph family {cfg.family!r}")


def make_graph(cfg: ExperimentConfig, n: int, param, seed: int) -> SubgoalGraph:
    if cfg.family == "tree":
        g = gen_tree(n, int(param))
    else:
        g = gen_semi_er(n, float(param), seed=seed, p=cfg.p)
    return assign_kinds(g, cfg.kinds, seed)


def graph_id(family: str, n: int, param, k: int) -> str:
    return f"{family}_n{n}_p{param}_s{k:03d}"


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write through a temporary name so an interrupted run never leaves a half file."""
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _read_rows(path: Path) -> list[dict[str, str]]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(x: float) -> str:
    return f"{x:.10g}"


# -- gen ---------------------------------------------------------------------


def cmd_gen(cfg: ExperimentConfig, seed: int, out: Path, workers: int) -> int:
    gdir = out / "graphs"
    gdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for n in cfg.n:
        for param in family_params(cfg):
            for k in range(cfg.seeds):
                s = derive_seed(seed, "graph", cfg.family, n, param, k)
                g = make_graph(cfg, n, param, s)
                gid = graph_id(cfg.family, n, param, k)
                (gdir / f"{gid}.txt").write_text(g.to_text())
                rows.append([gid, cfg.family, n, param, k, len(g.edges), len(g.ancestors(g.final))])
    _write_csv(out / "manifest.csv", MANIFEST_HEADER, rows)
    log.info("wrote %d graphs to %s", len(rows), gdir)
    return 0


# -- sweep -------------------------------------------------------------------


def _sweep_cell(job: tuple) -> tuple[str, list[list] | None, str | None]:
    cfg, seed, n, param, strategy, path = job
    try:
        T, T_prime = cfg.trajectories(1)
        params = CostParams(T, T_prime, cfg.w)
        rows = []
        for k in range(cfg.seeds):
            g = make_graph(cfg, n, param, derive_seed(seed, "graph", cfg.family, n, param, k))
            run = graph_search(g, strategy, derive_seed(seed, "search", cfg.family, n, param, strategy, k),
                               cfg.error_schedule, cfg.strategy_model, cfg.ece_delta, cfg.subset_cap)
            rows.append([cfg.family, n, param, strategy, k, _fmt(path_cost(run.IS, g, params)),
                         run.c, len(run.IS), int(run.success)])
        _write_csv(Path(path), SWEEP_HEADER, rows)
        return path, rows, None
    except Exception as exc:  # noqa: BLE001 - one bad cell must not stop the sweep
        return path, None, f"{type(exc).__name__}: {exc}"


def loglog_slope(ns: Sequence[float], costs: Sequence[float], points: int = SLOPE_POINTS) -> float:
    """Least-squares slope of ln(cost) on ln(n) over the ``points`` largest n."""
    order = np.argsort(ns)[-points:]
    x = np.log(np.asarray(ns, float)[order])
    y = np.log(np.asarray(costs, float)[order])
    if len(x) < 2:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


def summarize_sweep(rows: list[dict[str, str]]) -> list[list]:
    series: dict[tuple, dict[int, list[float]]] = {}
    for r in rows:
        key = (r["family"], r["c_or_b"], r["strategy"])
        series.setdefault(key, {}).setdefault(int(r["n"]), []).append(float(r["cost"]))
    out = []
    for key in sorted(series):
        ns = sorted(series[key])
        means = [float(np.mean(series[key][n])) for n in ns]
        out.append([*key, _fmt(loglog_slope(ns, means)), len(ns[-SLOPE_POINTS:])])
    return out


def _run_jobs(fn: Callable, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def cmd_sweep(cfg: ExperimentConfig, seed: int, out: Path, workers: int) -> int:
    cdir = out / "cells"
    cdir.mkdir(parents=True, exist_ok=True)
    params = family_params(cfg)
    jobs = []
    paths = []
    for n in cfg.n:
        for param in params:
            for strategy in cfg.strategies:
                path = cdir / f"sweep_{cfg.family}_n{n}_p{param}_{strategy}.csv"
                paths.append(path)
                if path.exists():
                    log.info("skipping finished cell %s", path.name)
                    continue
                jobs.append((cfg, seed, n, param, strategy, str(path)))
    failed = 0
    for path, _, err in _run_jobs(_sweep_cell, jobs, workers):
        if err is not None:
            failed += 1
            log.error("cell %s failed: %s", Path(path).name, err)
    rows = []
    for path in paths:
        if path.exists():
            rows.extend(_read_rows(path))
    rows.sort(key=lambda r: (r["family"], float(r["c_or_b"]), r["strategy"], int(r["n"]), int(r["seed"])))
    _write_csv(out / "sweep.csv", SWEEP_HEADER, ([r[h] for h in SWEEP_HEADER] for r in rows))
    _write_csv(out / "slopes.csv", SLOPE_HEADER, summarize_sweep(rows))
    _write_plot_description(out / "sweep_plot.json", cfg, "sweep.csv")
    return 2 if failed else 0


def _write_plot_description(path: Path, cfg: ExperimentConfig, data_file: str) -> None:
    series = [
        {"name": f"{cfg.family} {param} {strategy}", "filter": {"c_or_b": param, "strategy": strategy}}
        for param in family_params(cfg) for strategy in cfg.strategies
    ]
    description = {
        "data": data_file,
        "x": {"column": "n", "scale": "log", "label": "number of subgoals"},
        "y": {"column": "cost", "scale": "log", "label": "training cost", "aggregate": "mean"},
        "series": series,
    }
    path.write_text(json.dumps(description, indent=2, sort_keys=True) + "\n")


# -- discover-eval -----------------------------------------------------------


def _discover_graphs(cfg: ExperimentConfig, seed: int) -> list[tuple[str, SubgoalGraph]]:
    if cfg.family == "hidden-edge":
        return [("hidden_edge", hidden_edge())]
    out = []
    for n in cfg.n:
        for param in family_params(cfg):
            for k in range(cfg.seeds):
                g = make_graph(cfg, n, param, derive_seed(seed, "graph", cfg.family, n, param, k))
                out.append((graph_id(cfg.family, n, param, k), g))
    return out


def _discover_one(cfg: ExperimentConfig, seed: int, gid: str, g: SubgoalGraph) -> list[list]:
    truth = discoverable_graph(g).edges
    raw = g.edges
    rng = np.random.default_rng(derive_seed(seed, "data", gid))
    rows = []
    if cfg.data_mode == "ascm":
        T, _ = cfg.trajectories(20)
        acfg = AscmConfig(cfg.rho, horizon_H=cfg.horizon, explore_delta=cfg.explore_delta)
        env = AscmEnv(g, acfg, derive_seed(seed, "env", gid))
        data = collect_interventional(env, range(g.n), T)
        nodes = range(g.n)
        fit = lambda lam, engine: discover(data, (), nodes, lam, engine, targets=nodes, candidates=nodes)  # noqa: E731
    elif cfg.data_mode in ("sampled", "exhaustive"):
        if cfg.data_mode == "sampled":
            designs = {t: sampled_design(g, t, cfg.samples, cfg.rho, rng) for t in range(g.n)}
        else:
            designs = {t: valid_assignment_design(g, t) for t in range(g.n)}
        fit = lambda lam, engine: fit_graph(g, designs, lam, engine)  # noqa: E731
    else:
        raise ValueError(f"unknown data mode {cfg.data_mode!r}")
    for engine in cfg.engines:
        for lam in cfg.lam_grid:
            est = fit(lam, engine).edges()
            rep = shd(est, truth)
            rows.append([gid, engine, _fmt(lam), rep.missing, rep.extra, rep.shd, shd(est, raw).shd])
    return rows


def cmd_discover_eval(cfg: ExperimentConfig, seed: int, out: Path, workers: int) -> int:
    out.mkdir(parents=True, exist_ok=True)
    rows, failed = [], 0
    for gid, g in _discover_graphs(cfg, seed):
        try:
            rows.extend(_discover_one(cfg, seed, gid, g))
        except Exception as exc:  # noqa: BLE001
            failed += 1
            log.error("discovery on %s failed: %s", gid, exc)
    rows.sort(key=lambda r: (r[0], r[1], float(r[2])))
    _write_csv(out / "discover_eval.csv", DISCOVER_HEADER, rows)
    return 2 if failed else 0


# -- cost-exact --------------------------------------------------------------


def cmd_cost_exact(cfg: ExperimentConfig, seed: int, out: Path, workers: int) -> int:
    out.mkdir(parents=True, exist_ok=True)
    T, T_prime = cfg.trajectories(1)
    params = CostParams(T, T_prime, cfg.w)
    rows, failed = [], 0
    for n in cfg.n:
        for param in family_params(cfg):
            for k in range(cfg.seeds):
                gid = graph_id(cfg.family, n, param, k)
                g = make_graph(cfg, n, param, derive_seed(seed, "graph", cfg.family, n, param, k))
                for strategy in cfg.strategies:
                    try:
                        exact = expected_cost_exact(g, strategy, params, cfg.node_cap, cfg.ece_delta,
                                                    cfg.subset_cap)
                        mc = monte_carlo_cost(g, strategy, params, cfg.runs,
                                              derive_seed(seed, "mc", gid, strategy),
                                              ece_delta=cfg.ece_delta, subset_cap=cfg.subset_cap)
                    except Exception as exc:  # noqa: BLE001
                        failed += 1
                        log.error("cost on %s/%s failed: %s", gid, strategy, exc)
                        continue
                    rows.append([gid, n, param, strategy, _fmt(exact.expected_cost), _fmt(mc.mean),
                                 _fmt(mc.stderr), mc.runs])
    _write_csv(out / "cost_exact.csv", COST_HEADER, rows)
    return 2 if failed else 0


# -- gridworld ---------------------------------------------------------------


def gridworld_run(cfg: ExperimentConfig, strategy: str, seed: int) -> tuple[list[list], list]:
    layout = DEFAULT_LAYOUT if cfg.layout == "default" else Path(cfg.layout).read_text()
    T, T_prime = cfg.trajectories(20)
    hrc_cfg = HrcConfig(T=T, T_prime=T_prime, phi_causal=cfg.phi_causal, mix_p=cfg.mix_p,
                        discovery_engine=cfg.discovery_engine, max_actions=cfg.max_actions,
                        max_steps=cfg.max_steps, strategy=strategy, strategy_model="recovered",
                        ece_delta=20 if cfg.ece_delta is None else cfg.ece_delta,
                        subset_cap=cfg.subset_cap, max_probes=cfg.max_probes)
    task = GridTask(GridConfig(layout=layout, eval_episodes=cfg.eval_episodes), seed=seed)
    curve: list[list] = []

    def record(state) -> None:
        curve.append([strategy, seed, state.t, state.ledger.total,
                      _fmt(task.evaluate(state.hs, hrc_cfg))])

    state, ok = run_hrc(task, hrc_cfg, seed=seed, on_iteration=record)
    if not curve:
        record(state)
    if not ok:
        log.warning("gridworld %s seed %d stopped before the final subgoal (probes %d)",
                    strategy, seed, state.ledger.total)
    final_ratio = task.evaluate(state.hs, hrc_cfg)
    return curve, [strategy, seed, int(ok), state.ledger.total, _fmt(final_ratio)]


def cmd_gridworld(cfg: ExperimentConfig, seed: int, out: Path, workers: int) -> int:
    out.mkdir(parents=True, exist_ok=True)
    curves, summary = [], []
    for strategy in cfg.strategies:
        for k in range(cfg.seeds):
            curve, row = gridworld_run(cfg, strategy, derive_seed(seed, "grid", k))
            row[1] = k
            for r in curve:
                r[1] = k
            curves.extend(curve)
            summary.append(row)
    _write_csv(out / "gridworld.csv", GRID_HEADER, curves)
    _write_csv(out / "gridworld_summary.csv", GRID_SUMMARY_HEADER, summary)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "sweep": cmd_sweep,
    "discover-eval": cmd_discover_eval,
    "cost-exact": cmd_cost_exact,
    "gridworld": cmd_gridworld,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="hrc", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="output directory (overrides the config's out key)")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
    except (OSError, ValueError) as exc:
        print(f"hrc: bad configuration: {exc}", file=sys.stderr)
        return 1
    if args.seed < 0:
        print("hrc: --seed must be non-negative", file=sys.stderr)
        return 1
    out = Path(args.out or cfg.out)
    return COMMANDS[args.command](cfg, args.seed, out, max(1, args.workers))


if __name__ == "__main__":
    sys.exit(main())
