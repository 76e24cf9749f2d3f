"""Rules for choosing the next subgoal to add to the intervention set."""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import SubgoalGraph

INF = math.inf
ECE_TOL = 1e-9
DEFAULT_DELTA = 20
DEFAULT_SUBSET_CAP = 12
STRATEGIES = ("random", "causal-effect", "shortest-path", "hybrid")


@dataclass(frozen=True)
class EceQuery:
    A: frozenset[int]
    B: frozenset[int]
    target: int
    t_star: int = 0
    delta: int | None = DEFAULT_DELTA
    rollouts: int = 1

    def __post_init__(self) -> None:
        if self.target in self.A or self.target in self.B:
            raise ValueError("target must not be forced")
        if self.delta is not None and self.delta < 1:
            raise ValueError("delta must be positive")
        if self.rollouts < 1:
            raise ValueError("rollouts must be positive")


# -- expected causal effect ---------------------------------------------------


def _forced_rollouts(
    model: SubgoalGraph,
    init: np.ndarray,
    force_on: np.ndarray,
    force_off: np.ndarray,
    delta: int | None,
    rho: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Batch of persistent mechanism rollouts with forcing re-applied at every step."""
    x = (init | force_on) & ~force_off
    steps = model.n + 1 if delta is None else delta
    for _ in range(steps):
        theta = model.mechanism(x)
        if rho > 0:
            theta = theta ^ (rng.random(theta.shape) < rho)
        nxt = ((x | theta) | force_on) & ~force_off
        if rho == 0 and np.array_equal(nxt, x):
            break
        x = nxt
    return x


def ece_batch(
    model: SubgoalGraph,
    A_sets: Sequence[Iterable[int]],
    B_sets: Sequence[Iterable[int]],
    target: int,
    current_IS: Iterable[int],
    delta: int | None = DEFAULT_DELTA,
    rollouts: int = 1,
    rho: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Effect on ``target`` of forcing each A to 1 versus 0, with its paired B held at 0."""
    if not 0 <= target < model.n:
        raise ValueError(f"target {target} out of range")
    m = len(A_sets)
    if m == 0:
        return np.zeros(0)
    n = model.n
    a = np.zeros((m, n), bool)
    b = np.zeros((m, n), bool)
    for k, (A, B) in enumerate(zip(A_sets, B_sets)):
        a[k, list(A)] = True
        b[k, list(B)] = True
    if (a[:, target] | b[:, target]).any():
        raise ValueError("target must not be forced")
    init = np.zeros((2 * m, n), bool)
    init[:, list(set(current_IS))] = True
    force_on = np.vstack([a, np.zeros_like(a)])
    force_off = np.vstack([b, a | b])
    reps = rollouts if rho > 0 else 1
    total = np.zeros(2 * m)
    for _ in range(reps):
        final = _forced_rollouts(model, init, force_on, force_off, delta, rho, rng)
        total += final[:, target]
    mean = total / reps
    return mean[:m] - mean[m:]


def estimate_ece(
    model: SubgoalGraph,
    query: EceQuery,
    current_IS: Iterable[int],
    rho: float = 0.0,
    rng: np.random.Generator | None = None,
) -> float:
    """Rollout estimate of E[X_target | do(A=1), do(B=0)] - E[X_target | do(A=0), do(B=0)].

    All variables start at 0 except intervention-set members, which start at 1.
    """
    return float(ece_batch(model, [query.A], [query.B], query.target, current_IS,
                           query.delta, query.rollouts, rho, rng)[0])


def pick_causal_effect(
    CS: Iterable[int],
    model: SubgoalGraph,
    target: int,
    IS: Iterable[int],
    delta: int | None = DEFAULT_DELTA,
    others_achievable: bool = True,
) -> tuple[int, dict[int, float]]:
    """Candidate with the largest single-node effect on the target, starting from the intervention set.

    With ``others_achievable``, ties are broken by a second effect computed with
    every other controllable subgoal treated as achieved background, which
    singles out the missing inputs of AND gates. Remaining ties go to the
    lowest index. Returned scores are the primary effects.
    """
    cands = sorted(set(CS))
    if not cands:
        raise ValueError("controllable set is empty")
    if target in cands:
        return target, {target: 1.0}
    # each candidate's own forcing overrides its starting value, so one context serves all rows
    rows_a, rows_b = [[c] for c in cands], [[] for _ in cands]
    primary = ece_batch(model, rows_a, rows_b, target, set(IS), delta)
    key = np.round(primary / ECE_TOL) * ECE_TOL
    if others_achievable:
        wide = ece_batch(model, rows_a, rows_b, target, set(IS) | set(cands), delta)
        order = sorted(range(len(cands)), key=lambda i: (-key[i], -round(wide[i] / ECE_TOL), i))
    else:
        order = sorted(range(len(cands)), key=lambda i: (-key[i], i))
    return cands[order[0]], dict(zip(cands, primary.tolist()))


def pick_random(CS: Iterable[int], rng: np.random.Generator) -> int:
    cands = sorted(set(CS))
    if not cands:
        raise ValueError("controllable set is empty")
    return cands[int(rng.integers(len(cands)))]


# -- A* shortest path -----------------------------------------------------------


@dataclass
class AstarState:
    g_cost: dict[int, float] = field(default_factory=dict)
    h_cost: dict[int, float] = field(default_factory=dict)
    parent_pointer: dict[int, int] = field(default_factory=dict)
    closed: set[int] = field(default_factory=set)

    def f(self, node: int) -> float:
        return self.g_cost.get(node, INF) + self.h_cost.get(node, INF)

    def back_track(self, node: int) -> set[int]:
        path = {node}
        while node in self.parent_pointer:
            node = self.parent_pointer[node]
            if node in path:
                break
            path.add(node)
        return path


def _chain(ptr: dict[int, int | None], node: int) -> set[int]:
    out = set()
    while node is not None and node not in out:
        out.add(node)
        node = ptr.get(node)
    return out


def dynamic_dijkstra(model: SubgoalGraph, source: int, target: int) -> float:
    """Distance from ``source`` to ``target`` where leaving node u costs |CH(u) minus its back-track| + 1."""
    dist = {source: 0.0}
    ptr: dict[int, int | None] = {source: None}
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if u == target:
            return d
        if d > dist[u]:
            continue
        children = model.children[u]
        w = len(set(children) - _chain(ptr, u)) + 1
        for v in children:
            nd = d + w
            if nd < dist.get(v, INF):
                dist[v] = nd
                ptr[v] = u
                heapq.heappush(heap, (nd, v))
    return INF


def heuristic_table(model: SubgoalGraph, target: int) -> list[float]:
    """Distance-to-target for every node.

    On a DAG no child lies on its parent's back-track, so the dynamic weights
    reduce to |CH(u)| + 1 and one reverse pass gives every distance.
    """
    order = model.topological_order
    if order is None:
        return [dynamic_dijkstra(model, v, target) for v in range(model.n)]
    h = [INF] * model.n
    h[target] = 0.0
    for u in reversed(order):
        if u == target:
            continue
        w = len(model.children[u]) + 1
        best = min((h[v] for v in model.children[u]), default=INF)
        h[u] = best + w if best < INF else INF
    return h


def astar_update(state: AstarState, x_sel: int, model: SubgoalGraph, IS: Iterable[int],
                 target: int, h_table: Sequence[float] | None = None) -> AstarState:
    IS = set(IS)
    state.closed.add(x_sel)
    state.g_cost.setdefault(x_sel, 0.0)
    children = model.children[x_sel]
    step = len(set(children) - state.back_track(x_sel)) + 1
    for child in children:
        if child in IS:
            continue
        cand = state.g_cost[x_sel] + step
        if cand < state.g_cost.get(child, INF):
            state.g_cost[child] = cand
            state.parent_pointer[child] = x_sel
        state.h_cost[child] = h_table[child] if h_table is not None else dynamic_dijkstra(model, child, target)
    return state


def pick_shortest_path(state: AstarState, CS: Iterable[int]) -> int:
    """Smallest f = g + h; among equal f the deeper node (larger g) wins, then the lower index."""
    cands = sorted(set(CS))
    if not cands:
        raise ValueError("controllable set is empty")

    def key(v: int):
        f = state.f(v)
        if f == INF:
            return (1, 0.0, 0.0, v)
        return (0, f, -state.g_cost.get(v, 0.0), v)

    return min(cands, key=key)


# -- hybrid ---------------------------------------------------------------------


@dataclass(frozen=True)
class HybridCandidate:
    members: tuple[int, ...]
    ece: float
    G: float
    H: int

    @property
    def F(self) -> float:
        return self.G + self.H


def path_nodes_to_target(model: SubgoalGraph, sources: Iterable[int], target: int) -> set[int]:
    """Nodes lying on some directed path from ``sources`` to ``target``, target excluded."""
    upstream = model.ancestors(target)
    reach: set[int] = set()
    for s in sources:
        reach.add(s)
        reach |= model.descendants(s)
    return (reach & upstream) - {target}


def hybrid_candidates(
    CS: Iterable[int],
    model: SubgoalGraph,
    target: int,
    IS: Iterable[int],
    g_cost: dict[int, float],
    delta: int | None = DEFAULT_DELTA,
) -> list[HybridCandidate]:
    cands = sorted(set(CS))
    IS = set(IS)
    subsets = [c for r in range(1, len(cands) + 1) for c in itertools.combinations(cands, r)]
    A_sets = [set(s) for s in subsets]
    B_sets = [set(cands) - s for s in A_sets]
    effects = ece_batch(model, A_sets, B_sets, target, IS, delta)
    out = []
    for members, eff in zip(subsets, effects):
        if abs(eff) <= ECE_TOL:
            continue
        parents = set().union(*(model.parents[v] for v in members)) - set(members)
        G = sum(g_cost.get(p, 0.0) + len(set(model.children[p]) - IS) + 1 for p in parents)
        H = len(path_nodes_to_target(model, members, target))
        out.append(HybridCandidate(members, float(eff), float(G), H))
    return out


def pick_hybrid(
    CS: Iterable[int],
    model: SubgoalGraph,
    target: int,
    IS: Iterable[int],
    queue: list[int],
    g_cost: dict[int, float] | None = None,
    subset_cap: int = DEFAULT_SUBSET_CAP,
    delta: int | None = DEFAULT_DELTA,
) -> int:
    """Pop the queued plan if any; otherwise queue the nonzero-effect subset with the smallest F = G + H."""
    cs = set(CS)
    if not cs:
        raise ValueError("controllable set is empty")
    while queue:
        nxt = queue.pop(0)
        if nxt in cs:
            return nxt
    if target in cs:
        return target
    if len(cs) > subset_cap:
        return pick_causal_effect(cs, model, target, IS, delta)[0]
    found = hybrid_candidates(cs, model, target, IS, g_cost or {}, delta)
    if not found:
        return pick_causal_effect(cs, model, target, IS, delta)[0]
    best = min(found, key=lambda c: (c.F, len(c.members), c.members))
    queue.extend(sorted(best.members))
    return queue.pop(0)


# -- stateful wrappers used by the search loops ---------------------------------------


@dataclass(frozen=True)
class Decision:
    iteration: int
    candidates: tuple[int, ...]
    scores: tuple[float, ...]
    chosen: int


class Strategy:
    """Per-run selection rule with its own bookkeeping and decision log."""

    name = "base"

    def __init__(self, delta: int | None = DEFAULT_DELTA, subset_cap: int = DEFAULT_SUBSET_CAP):
        self.delta = delta
        self.subset_cap = subset_cap
        self.decisions: list[Decision] = []

    def choose(self, CS: set[int], IS: Sequence[int], model: SubgoalGraph, target: int,
               rng: np.random.Generator) -> int:
        raise NotImplementedError

    def expanded(self, x_sel: int, model: SubgoalGraph, IS: Sequence[int], target: int) -> None:
        pass

    def _log(self, cands: Iterable[int], scores: Iterable[float], chosen: int) -> int:
        self.decisions.append(Decision(len(self.decisions) + 1, tuple(cands), tuple(scores), chosen))
        return chosen


class RandomStrategy(Strategy):
    name = "random"

    def choose(self, CS, IS, model, target, rng):
        cands = sorted(CS)
        return self._log(cands, [1.0 / len(cands)] * len(cands), pick_random(cands, rng))


class CausalEffectStrategy(Strategy):
    name = "causal-effect"

    def choose(self, CS, IS, model, target, rng):
        chosen, scores = pick_causal_effect(CS, model, target, IS, self.delta)
        cands = sorted(scores)
        return self._log(cands, [scores[c] for c in cands], chosen)


class ShortestPathStrategy(Strategy):
    name = "shortest-path"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.state = AstarState()
        self._model: SubgoalGraph | None = None
        self._h: list[float] = []

    def _heuristic(self, model: SubgoalGraph, target: int) -> list[float]:
        if model is not self._model:
            self._model = model
            self._h = heuristic_table(model, target)
            for v in list(self.state.h_cost):
                self.state.h_cost[v] = self._h[v]
        return self._h

    def choose(self, CS, IS, model, target, rng):
        h = self._heuristic(model, target)
        for v in CS:
            self.state.g_cost.setdefault(v, 0.0)
            self.state.h_cost.setdefault(v, h[v])
        chosen = pick_shortest_path(self.state, CS)
        cands = sorted(CS)
        return self._log(cands, [self.state.f(v) for v in cands], chosen)

    def expanded(self, x_sel, model, IS, target):
        astar_update(self.state, x_sel, model, IS, target, self._heuristic(model, target))


class HybridStrategy(ShortestPathStrategy):
    name = "hybrid"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.queue: list[int] = []

    def choose(self, CS, IS, model, target, rng):
        chosen = pick_hybrid(CS, model, target, IS, self.queue, self.state.g_cost,
                             self.subset_cap, self.delta)
        cands = sorted(CS)
        return self._log(cands, [1.0 if v == chosen else 0.0 for v in cands], chosen)


def make_strategy(kind: str, delta: int | None = DEFAULT_DELTA,
                  subset_cap: int = DEFAULT_SUBSET_CAP) -> Strategy:
    classes = {
        "random": RandomStrategy,
        "causal-effect": CausalEffectStrategy,
        "shortest-path": ShortestPathStrategy,
        "hybrid": HybridStrategy,
    }
    if kind not in classes:
        raise ValueError(f"unknown strategy {kind!r}; expected one of {STRATEGIES}")
    return classes[kind](delta, subset_cap)
