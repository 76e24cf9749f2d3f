"""Probe-free abstract loop over intervention and controllable sets, with exact edge reveal."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import Edge, NodeKind, SubgoalGraph
from .ssd import RecoveredGraph
from .strategy import DEFAULT_SUBSET_CAP, Decision, Strategy, make_strategy


def reachable_under(graph: SubgoalGraph, I: Iterable[int]) -> set[int]:
    """Non-members whose AND/OR condition is met by ``I`` (parentless nodes never count)."""
    I = set(I)
    out = set()
    for p in I:
        for c in graph.children[p]:
            if c in I or c in out:
                continue
            if graph.kinds[c] is NodeKind.OR or all(q in I for q in graph.parents[c]):
                out.add(c)
    return out


def newly_reachable(graph: SubgoalGraph, I: Iterable[int], x: int) -> set[int]:
    """Nodes reachable once ``x`` joins ``I`` that were not reachable before."""
    I = set(I)
    after = I | {x}
    out = set()
    for c in graph.children[x]:
        if c in after:
            continue
        ps = graph.parents[c]
        if graph.kinds[c] is NodeKind.OR:
            if not any(q in I for q in ps):
                out.add(c)
        elif all(q in after for q in ps):
            out.add(c)
    return out


def revealable_edges(graph: SubgoalGraph, IS: Iterable[int]) -> set[Edge]:
    """Edges from intervention-set members into children whose condition is met."""
    IS = set(IS)
    return {
        (p, c)
        for p in IS
        for c in graph.children[p]
        if graph.kinds[c] is NodeKind.OR or all(q in IS for q in graph.parents[c])
    }


class ExactDiscovery:
    """Incremental reveal of edges, optionally withholding each new edge with probability 1/(1+t).

    A withheld edge is offered again at every later iteration.
    """

    def __init__(self, graph: SubgoalGraph, error_schedule: bool = False,
                 rng: np.random.Generator | None = None):
        self.graph = graph
        self.error_schedule = error_schedule
        self.rng = rng if rng is not None else np.random.default_rng()
        self.revealed: set[Edge] = set()
        self.pending: set[Edge] = set()
        self._members: set[int] = set()

    def _offer(self, IS: Sequence[int]) -> set[Edge]:
        g = self.graph
        added = set(IS) - self._members
        self._members |= added
        fresh: set[Edge] = set()
        for x in sorted(added):
            for c in g.children[x]:
                if g.kinds[c] is NodeKind.OR:
                    fresh.add((x, c))
                elif all(q in self._members for q in g.parents[c]):
                    fresh.update((q, c) for q in g.parents[c])
        return (fresh | self.pending) - self.revealed

    def update(self, IS: Sequence[int], t: int) -> set[Edge]:
        """Reveal edges for the current intervention set; returns the edges revealed now."""
        offered = self._offer(IS)
        if self.error_schedule:
            miss = 1.0 / (1.0 + t)
            ordered = sorted(offered)
            keep = self.rng.random(len(ordered)) >= miss
            shown = {e for e, k in zip(ordered, keep) if k}
        else:
            shown = offered
        self.pending = offered - shown
        self.revealed |= shown
        return shown

    def recovered(self) -> RecoveredGraph:
        parents: dict[int, set[int]] = {}
        for p, c in self.revealed:
            parents.setdefault(c, set()).add(p)
        return RecoveredGraph(
            self.graph.n,
            {c: frozenset(ps) for c, ps in parents.items()},
            kinds={c: self.graph.kinds[c] for c in parents},
        )


def discovery_exact(
    graph: SubgoalGraph,
    IS: Iterable[int],
    t: int,
    error_schedule: bool = False,
    rng: np.random.Generator | None = None,
    revealed: Iterable[Edge] = (),
) -> RecoveredGraph:
    """Stateless form: edges already ``revealed`` are kept; others obey the reveal rule and schedule."""
    known = set(revealed)
    offered = revealable_edges(graph, IS) - known
    if error_schedule:
        rng = rng if rng is not None else np.random.default_rng()
        ordered = sorted(offered)
        keep = rng.random(len(ordered)) >= 1.0 / (1.0 + t)
        offered = {e for e, k in zip(ordered, keep) if k}
    parents: dict[int, set[int]] = {}
    for p, c in known | offered:
        parents.setdefault(c, set()).add(p)
    return RecoveredGraph(graph.n, {c: frozenset(ps) for c, ps in parents.items()},
                          kinds={c: graph.kinds[c] for c in parents})


@dataclass
class SearchResult:
    IS: tuple[int, ...]
    CS: frozenset[int]
    additions: int
    success: bool
    decisions: list[Decision] = field(default_factory=list)
    ccs_history: list[frozenset[int]] = field(default_factory=list)

    @property
    def c(self) -> int:
        return 2 * len(self.IS) + len(self.CS)


def graph_search(
    graph: SubgoalGraph,
    strategy: str | Strategy,
    seed: int | np.random.Generator | None = None,
    error_schedule: bool = False,
    strategy_model: str = "truth",
    ece_delta: int | None = None,
    subset_cap: int = DEFAULT_SUBSET_CAP,
) -> SearchResult:
    """Grow the intervention set one pick at a time until the final node is in it or nothing is left.

    ``strategy_model`` selects what the ranking rules see: the ground-truth
    graph, or only the edges revealed so far.
    """
    graph.require_dag()
    if strategy_model not in ("truth", "recovered"):
        raise ValueError(f"unknown strategy model {strategy_model!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    strat = make_strategy(strategy, ece_delta, subset_cap) if isinstance(strategy, str) else strategy
    final = graph.final
    disc = ExactDiscovery(graph, error_schedule, rng)
    CS: set[int] = set(graph.roots)
    IS: list[int] = []
    additions = len(CS)
    history: list[frozenset[int]] = []
    model = graph
    t = 0
    while final not in IS and (CS or disc.pending):
        t += 1
        if not CS:
            # nothing to pick: a reveal-only pass offers the withheld edges again
            shown = disc.update(IS, t)
            x = None
        else:
            x = strat.choose(CS, IS, model, final, rng)
            CS.remove(x)
            IS.append(x)
            additions += 1
            shown = disc.update(IS, t)
        if strategy_model == "recovered":
            model = disc.recovered().to_graph(final)
        if x is not None:
            strat.expanded(x, model, IS, final)
        members = set(IS)
        ccs = frozenset(c for _, c in shown if c not in members and c not in CS)
        history.append(ccs)
        CS |= ccs
        additions += len(ccs)
    return SearchResult(tuple(IS), frozenset(CS), additions, final in IS, strat.decisions, history)
