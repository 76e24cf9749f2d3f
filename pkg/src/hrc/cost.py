"""Training-cost accounting: per-transition charges, exact expected cost, Monte Carlo estimates."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import CapacityError, SubgoalGraph
from .search import graph_search, newly_reachable, reachable_under
from .strategy import DEFAULT_SUBSET_CAP

EXACT_NODE_CAP = 20
PHASES = ("intervention", "exploration", "training")


@dataclass(frozen=True)
class CostParams:
    T: float = 1.0
    T_prime: float = 1.0
    w: float = 1.0

    def __post_init__(self) -> None:
        if min(self.T, self.T_prime, self.w) <= 0:
            raise ValueError("T, T_prime and w must all be positive")


@dataclass
class CostLedger:
    """Probe counters split by phase, with one breakdown per loop iteration."""

    intervention_probes: int = 0
    exploration_probes: int = 0
    training_probes: int = 0
    per_iteration: list[dict[str, int]] = field(default_factory=list)

    def open_iteration(self) -> None:
        self.per_iteration.append(dict.fromkeys(PHASES, 0))

    def charge(self, phase: str, probes: int) -> None:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        if probes < 0:
            raise ValueError("probe counts are non-negative")
        if not self.per_iteration:
            self.open_iteration()
        setattr(self, f"{phase}_probes", getattr(self, f"{phase}_probes") + probes)
        self.per_iteration[-1][phase] += probes

    def charge_counts(self, counts: dict[str, int]) -> None:
        for phase, k in counts.items():
            self.charge(phase, k)

    @property
    def total(self) -> int:
        return self.intervention_probes + self.exploration_probes + self.training_probes

    def consistent(self) -> bool:
        return all(
            getattr(self, f"{p}_probes") == sum(it[p] for it in self.per_iteration) for p in PHASES
        )


@dataclass(frozen=True)
class MdpCostResult:
    expected_cost: float
    states_visited: int


@dataclass(frozen=True)
class McCostResult:
    mean: float
    stderr: float
    runs: int


def transition_cost(I: Iterable[int], x_sel: int, graph: SubgoalGraph, params: CostParams) -> float:
    I = set(I)
    if x_sel in I:
        raise ValueError(f"node {x_sel} is already in the intervention set")
    k = len(I) + 2
    revealed = newly_reachable(graph, I, x_sel)
    return params.T * k * params.w + len(revealed) * params.T_prime * k * params.w


def path_cost(order: Sequence[int], graph: SubgoalGraph, params: CostParams) -> float:
    """Sum of transition costs along an intervention-set growth order."""
    total = 0.0
    for i, x in enumerate(order):
        total += transition_cost(order[:i], x, graph, params)
    return total


def _require_small_dag(graph: SubgoalGraph, node_cap: int) -> None:
    graph.require_dag()
    if graph.n > node_cap:
        raise CapacityError(f"exact cost supports at most {node_cap} nodes, got {graph.n}")


def expected_cost_exact(
    graph: SubgoalGraph,
    strategy: str,
    params: CostParams,
    node_cap: int = EXACT_NODE_CAP,
    ece_delta: int | None = None,
    subset_cap: int = DEFAULT_SUBSET_CAP,
) -> MdpCostResult:
    """Expected cost from the empty intervention set until the final node joins it.

    The random rule spreads probability uniformly over the controllable set,
    so the recursion is memoized over every reachable subset. Targeted rules
    are deterministic and follow a single path.
    """
    _require_small_dag(graph, node_cap)
    if strategy != "random":
        run = graph_search(graph, strategy, seed=0, ece_delta=ece_delta, subset_cap=subset_cap)
        return MdpCostResult(path_cost(run.IS, graph, params), len(run.IS) + 1)

    roots = set(graph.roots)
    final = graph.final
    memo: dict[frozenset[int], float] = {}

    def cost(I: frozenset[int]) -> float:
        if final in I:
            return 0.0
        if I in memo:
            return memo[I]
        cs = (roots | reachable_under(graph, I)) - I
        if not cs:
            memo[I] = 0.0
            return 0.0
        total = sum(transition_cost(I, x, graph, params) + cost(I | {x}) for x in cs)
        memo[I] = total / len(cs)
        return memo[I]

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10 * graph.n + 100))
    try:
        value = cost(frozenset())
    finally:
        sys.setrecursionlimit(limit)
    return MdpCostResult(value, len(memo) + 1)


def monte_carlo_cost(
    graph: SubgoalGraph,
    strategy: str,
    params: CostParams,
    runs: int,
    seed: int | None = None,
    error_schedule: bool = False,
    ece_delta: int | None = None,
    subset_cap: int = DEFAULT_SUBSET_CAP,
) -> McCostResult:
    """Sample mean and standard error of the charged cost over independent abstract runs."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    rng = np.random.default_rng(seed)
    costs = np.empty(runs)
    for r in range(runs):
        run = graph_search(graph, strategy, rng, error_schedule, ece_delta=ece_delta,
                           subset_cap=subset_cap)
        costs[r] = path_cost(run.IS, graph, params)
    stderr = float(costs.std(ddof=1) / np.sqrt(runs)) if runs > 1 else 0.0
    return McCostResult(float(costs.mean()), stderr, runs)
