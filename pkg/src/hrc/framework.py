"""The outer discovery loop: pick a subgoal, sample interventions, discover structure, train."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .ascm import AscmConfig, AscmEnv, Dataset, Outcome, Trajectory, collect_interventional
from .cost import CostLedger
from .graph import (
    HierarchicalStructure,
    SubgoalGraph,
    remove_from_hierarchy,
    update_hierarchy,
)
from .search import ExactDiscovery
from .ssd import DEFAULT_LAMBDA, RecoveredGraph, discover
from .strategy import DEFAULT_DELTA, DEFAULT_SUBSET_CAP, STRATEGIES, Strategy, make_strategy

log = logging.getLogger(__name__)

DISCOVERY_ENGINES = ("ssd-l1", "ssd-oracle", "exact", "exact-with-error")


@dataclass(frozen=True)
class HrcConfig:
    T: int = 20
    T_prime: int = 20
    phi_causal: float = 0.9
    mix_p: float = 0.1
    discovery_engine: str = "exact"
    lam: float = DEFAULT_LAMBDA
    max_actions: int = 20
    max_steps: int = 100
    strategy: str = "random"
    strategy_model: str = "recovered"
    ece_delta: int | None = DEFAULT_DELTA
    subset_cap: int = DEFAULT_SUBSET_CAP
    max_probes: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.phi_causal <= 1.0:
            raise ValueError("phi_causal must lie in (0, 1]")
        if not 0.0 <= self.mix_p <= 1.0:
            raise ValueError("mix_p must lie in [0, 1]")
        if self.T < 1 or self.T_prime < 1:
            raise ValueError("T and T_prime must be at least 1")
        if self.discovery_engine not in DISCOVERY_ENGINES:
            raise ValueError(f"unknown discovery engine {self.discovery_engine!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy_model not in ("truth", "recovered"):
            raise ValueError(f"unknown strategy model {self.strategy_model!r}")

    @property
    def error_schedule(self) -> bool:
        return self.discovery_engine == "exact-with-error"


@dataclass
class IterationRecord:
    t: int
    x_sel: int | None
    is_size: int
    cs_size: int
    ccs_size: int
    probes: int
    cumulative: int


@dataclass
class HrcRunState:
    n: int
    IS: list[int] = field(default_factory=list)
    CS: set[int] = field(default_factory=set)
    CCS: set[int] = field(default_factory=set)
    hs: HierarchicalStructure = field(default_factory=HierarchicalStructure)
    t: int = 0
    ledger: CostLedger = field(default_factory=CostLedger)
    recovered: RecoveredGraph | None = None
    records: list[IterationRecord] = field(default_factory=list)
    training_ratios: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.recovered is None:
            self.recovered = RecoveredGraph(self.n)


class Task(Protocol):
    """What the loop needs from an environment: probes are reported per phase."""

    n: int
    final: int
    truth: SubgoalGraph | None

    @property
    def steps(self) -> int: ...

    def pretrain(self, config: HrcConfig) -> tuple[set[int], dict[str, int]]: ...

    def collect(self, IS: list[int], hs: HierarchicalStructure,
                config: HrcConfig) -> tuple[Dataset, dict[str, int]]: ...

    def train(self, targets: set[int], IS: list[int], hs: HierarchicalStructure,
              config: HrcConfig) -> tuple[dict[int, float], dict[str, int]]: ...


class AscmTask:
    """Simulated environment: subgoals are A-SCM variables, skills are forcings."""

    def __init__(self, graph: SubgoalGraph, ascm: AscmConfig | None = None, seed: int | None = None):
        graph.require_dag()
        self.truth = graph
        self.n = graph.n
        self.final = graph.final
        self.env = AscmEnv(graph, ascm or AscmConfig(), seed)

    @property
    def steps(self) -> int:
        return self.env.total_steps

    def pretrain(self, config: HrcConfig) -> tuple[set[int], dict[str, int]]:
        return set(self.truth.roots), {}

    def collect(self, IS: list[int], hs: HierarchicalStructure, config: HrcConfig
                ) -> tuple[Dataset, dict[str, int]]:
        data = collect_interventional(self.env, IS, config.T)
        return data, data.phase_counts()

    def train(self, targets, IS, hs, config):
        env = self.env
        horizon = env.config.horizon_H
        allowed = set(IS)
        before = env.total_steps
        ratios = {}
        for g in sorted(targets):
            hits = 0
            for _ in range(config.T_prime):
                env.reset()
                traj: Trajectory = []
                while len(traj) < horizon and not env.x[g]:
                    pending = [u for u in IS if not env.x[u]]
                    if pending and env.rng.random() < config.mix_p:
                        u = pending[int(env.rng.integers(len(pending)))]
                        env.pursue(u, allowed, traj, horizon, "training")
                    elif env.pursue(g, allowed, traj, horizon, "training") is Outcome.BLOCKED:
                        break
                hits += bool(env.x[g])
            ratios[g] = hits / config.T_prime
        return ratios, {"training": env.total_steps - before}


def candidate_controllable(recovered: RecoveredGraph, IS, CS) -> set[int]:
    """Nodes outside both sets whose recovered parents are nonempty and all in the intervention set."""
    members = set(IS)
    return {
        c
        for c, ps in recovered.parents.items()
        if ps and c not in members and c not in CS and ps <= members
    }


class _Discoverer:
    def __init__(self, task: Task, config: HrcConfig, rng: np.random.Generator):
        self.engine = config.discovery_engine
        self.config = config
        self.exact = None
        self.data = Dataset(task.n)
        if self.engine.startswith("exact"):
            if task.truth is None:
                raise ValueError("exact discovery needs a ground-truth graph")
            self.exact = ExactDiscovery(task.truth, config.error_schedule, rng)

    @property
    def pending(self) -> bool:
        """Edges withheld by the error schedule are still waiting to be offered again."""
        return self.exact is not None and bool(self.exact.pending)

    def __call__(self, state: HrcRunState, data: Dataset) -> RecoveredGraph:
        if self.exact is not None:
            self.exact.update(state.IS, state.t)
            return self.exact.recovered()
        self.data.extend(data)
        engine = self.engine.removeprefix("ssd-")
        fresh = discover(self.data, state.IS, range(state.n), self.config.lam, engine)
        return state.recovered.merged(fresh)


def run_hrc(task: Task, config: HrcConfig, seed: int | None = None,
            strategy: Strategy | None = None,
            on_iteration: Callable[[HrcRunState], None] | None = None) -> tuple[HrcRunState, bool]:
    """Run the loop until the final subgoal enters the intervention set, the controllable set
    empties, or the probe budget runs out."""
    rng = np.random.default_rng(seed)
    strat = strategy or make_strategy(config.strategy, config.ece_delta, config.subset_cap)
    state = HrcRunState(task.n)
    discoverer = _Discoverer(task, config, rng)

    state.ledger.open_iteration()
    roots, counts = task.pretrain(config)
    state.ledger.charge_counts(counts)
    state.CS = set(roots)
    state.hs = update_hierarchy(state.hs, (), children=roots)

    final = task.final
    while final not in state.IS and (state.CS or discoverer.pending):
        if config.max_probes is not None and state.ledger.total >= config.max_probes:
            log.info("probe budget exhausted after %d iterations", state.t)
            break
        state.t += 1
        state.ledger.open_iteration()
        model = (task.truth if config.strategy_model == "truth" and task.truth is not None
                 else state.recovered.to_graph(final))
        x_sel = None
        if state.CS:
            x_sel = strat.choose(state.CS, state.IS, model, final, rng)
            state.CS.discard(x_sel)
            state.IS.append(x_sel)

        data, counts = task.collect(state.IS, state.hs, config)
        state.ledger.charge_counts(counts)
        state.recovered = discoverer(state, data)
        if config.strategy_model == "recovered" or task.truth is None:
            model = state.recovered.to_graph(final)
        if x_sel is not None:
            strat.expanded(x_sel, model, state.IS, final)

        state.CCS = candidate_controllable(state.recovered, state.IS, state.CS)
        passed: set[int] = set()
        if state.CCS:
            edges = [(p, c) for c in state.CCS for p in state.recovered.parents_of(c)]
            state.hs = update_hierarchy(state.hs, edges, children=state.CCS)
            targets = {final} if final in state.CCS else set(state.CCS)
            ratios, counts = task.train(targets, state.IS, state.hs, config)
            state.ledger.charge_counts(counts)
            state.training_ratios.update(ratios)
            passed = {g for g, r in ratios.items() if r >= config.phi_causal}
            state.hs = remove_from_hierarchy(state.hs, state.CCS - passed)
        state.CS |= passed

        probes = sum(state.ledger.per_iteration[-1].values())
        state.records.append(IterationRecord(state.t, x_sel, len(state.IS), len(state.CS),
                                             len(state.CCS), probes, state.ledger.total))
        if on_iteration is not None:
            on_iteration(state)
    return state, final in state.IS


def run_log_csv(state: HrcRunState) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "x_sel", "IS_size", "CS_size", "CCS_size", "probes_this_iter", "cumulative_probes"])
    for r in state.records:
        writer.writerow([r.t, "" if r.x_sel is None else r.x_sel, r.is_size, r.cs_size, r.ccs_size, r.probes, r.cumulative])
    return buf.getvalue()
