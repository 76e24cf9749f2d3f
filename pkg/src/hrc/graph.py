"""Subgoal graphs, random generators, hierarchy bookkeeping and structural metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

MAX_ENUMERATION_NODES = 20


class NodeKind(str, Enum):
    AND = "AND"
    OR = "OR"


class CapacityError(ValueError):
    """Raised when an exhaustive routine is asked to handle too many nodes."""


class CyclicGraphError(ValueError):
    pass


Edge = tuple[int, int]


@dataclass(frozen=True)
class SubgoalGraph:
    n: int
    parents: tuple[tuple[int, ...], ...]
    kinds: tuple[NodeKind, ...]
    final: int
    names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("a subgoal graph needs at least one node")
        if len(self.parents) != self.n or len(self.kinds) != self.n:
            raise ValueError("parents and kinds must have one entry per node")
        if not 0 <= self.final < self.n:
            raise ValueError(f"final node {self.final} out of range")
        for child, ps in enumerate(self.parents):
            if list(ps) != sorted(set(ps)):
                raise ValueError(f"parents of {child} must be sorted and unique")
            for p in ps:
                if not 0 <= p < self.n:
                    raise ValueError(f"parent {p} of {child} out of range")
                if p == child:
                    raise ValueError(f"self-loop on node {child}")
        if self.names is not None and len(self.names) != self.n:
            raise ValueError("names must have one entry per node")

    @classmethod
    def from_edges(
        cls,
        n: int,
        edges: Iterable[Edge],
        kinds: Sequence[NodeKind] | NodeKind = NodeKind.OR,
        final: int | None = None,
        names: Sequence[str] | None = None,
    ) -> "SubgoalGraph":
        buckets: list[set[int]] = [set() for _ in range(n)]
        for p, c in edges:
            if not (0 <= c < n):
                raise ValueError(f"edge ({p}, {c}) out of range")
            buckets[c].add(p)
        if isinstance(kinds, NodeKind):
            kinds = [kinds] * n
        return cls(
            n=n,
            parents=tuple(tuple(sorted(b)) for b in buckets),
            kinds=tuple(NodeKind(k) for k in kinds),
            final=n - 1 if final is None else final,
            names=tuple(names) if names is not None else None,
        )

    # -- structure -----------------------------------------------------

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for c, ps in enumerate(self.parents):
            for p in ps:
                out[p].append(c)
        return tuple(tuple(sorted(ch)) for ch in out)

    @cached_property
    def edges(self) -> frozenset[Edge]:
        return frozenset((p, c) for c, ps in enumerate(self.parents) for p in ps)

    @cached_property
    def roots(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if not self.parents[i])

    @cached_property
    def indegree(self) -> np.ndarray:
        return np.array([len(ps) for ps in self.parents], dtype=np.int64)

    @cached_property
    def is_and(self) -> np.ndarray:
        return np.array([k is NodeKind.AND for k in self.kinds], dtype=bool)

    @cached_property
    def parent_matrix(self):
        """Sparse (n, n) matrix with entry [p, c] = 1 for every edge p -> c."""
        rows = [p for p, _ in self.edges]
        cols = [c for _, c in self.edges]
        data = np.ones(len(rows), dtype=np.int64)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def _dense_parent_matrix(self) -> np.ndarray:
        return self.parent_matrix.toarray().astype(np.float64)

    def parent_counts(self, x: np.ndarray) -> np.ndarray:
        """Number of achieved parents per node for state(s) ``x``."""
        x = np.asarray(x, dtype=np.float64)
        if self.n <= 128:
            counts = x @ self._dense_parent_matrix
        else:
            counts = np.asarray(self.parent_matrix.T.dot(x.T)).T
        return np.rint(counts).astype(np.int64)

    def label(self, i: int) -> str:
        return self.names[i] if self.names is not None else str(i)

    def index(self, name: str) -> int:
        if self.names is None:
            return int(name)
        return self.names.index(name)

    def with_kinds(self, kinds: Sequence[NodeKind]) -> "SubgoalGraph":
        return SubgoalGraph(self.n, self.parents, tuple(kinds), self.final, self.names)

    def with_final(self, final: int) -> "SubgoalGraph":
        return SubgoalGraph(self.n, self.parents, self.kinds, final, self.names)

    def ancestors(self, i: int) -> frozenset[int]:
        seen: set[int] = set()
        stack = list(self.parents[i])
        while stack:
            j = stack.pop()
            if j not in seen:
                seen.add(j)
                stack.extend(self.parents[j])
        return frozenset(seen)

    def descendants(self, i: int) -> frozenset[int]:
        seen: set[int] = set()
        stack = list(self.children[i])
        while stack:
            j = stack.pop()
            if j not in seen:
                seen.add(j)
                stack.extend(self.children[j])
        return frozenset(seen)

    @cached_property
    def topological_order(self) -> tuple[int, ...] | None:
        indeg = [len(ps) for ps in self.parents]
        ready = [i for i in range(self.n) if indeg[i] == 0]
        order: list[int] = []
        while ready:
            i = ready.pop()
            order.append(i)
            for c in self.children[i]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        return tuple(order) if len(order) == self.n else None

    def is_acyclic(self) -> bool:
        return self.topological_order is not None

    def require_dag(self) -> None:
        if not self.is_acyclic():
            raise CyclicGraphError("cyclic subgoal graphs are not supported here")

    # -- mechanism -----------------------------------------------------

    def mechanism(self, x: np.ndarray) -> np.ndarray:
        """Evaluate every node's AND/OR rule on binary state(s) ``x``.

        Accepts shape (n,) or (batch, n). Parentless nodes evaluate to 0.
        """
        counts = self.parent_counts(x)
        has_parents = self.indegree > 0
        fire_and = counts == self.indegree
        fire_or = counts > 0
        return np.where(self.is_and, fire_and, fire_or) & has_parents

    # -- serialization -------------------------------------------------

    def to_text(self) -> str:
        lines = [f"n={self.n} final={self.final}"]
        for i in range(self.n):
            ps = ",".join(str(p) for p in self.parents[i])
            lines.append(f"node={i} kind={self.kinds[i].value} parents={ps}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SubgoalGraph":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty graph text")
        header = _parse_fields(lines[0])
        n, final = int(header["n"]), int(header["final"])
        if len(lines) != n + 1:
            raise ValueError(f"expected {n} node lines, found {len(lines) - 1}")
        parents: list[tuple[int, ...]] = [()] * n
        kinds: list[NodeKind] = [NodeKind.OR] * n
        seen = set()
        for ln in lines[1:]:
            fields = _parse_fields(ln)
            i = int(fields["node"])
            if i in seen or not 0 <= i < n:
                raise ValueError(f"bad or duplicate node line: {ln!r}")
            seen.add(i)
            kinds[i] = NodeKind(fields["kind"])
            raw = fields["parents"]
            parents[i] = tuple(int(p) for p in raw.split(",")) if raw else ()
        return cls(n, tuple(parents), tuple(kinds), final)


def _parse_fields(line: str) -> dict[str, str]:
    out = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ValueError(f"malformed token {token!r}")
        out[key] = value
    return out


# -- generators ----------------------------------------------------------


def gen_tree(n: int, b: int, seed: int | None = None) -> SubgoalGraph:
    """Breadth-first numbered tree; the final node is the last (deepest) leaf.

    ``seed`` is accepted for a uniform generator signature; the tree is fixed.
    """
    if n < 1:
        raise ValueError("tree needs n >= 1")
    if b < 2:
        raise ValueError("branching factor must be >= 2")
    edges = [((i - 1) // b, i) for i in range(1, n)]
    return SubgoalGraph.from_edges(n, edges, NodeKind.OR, final=n - 1)


def semi_er_probability(n: int, c: float) -> float:
    return c * math.log(n) / (n - 1)


def gen_semi_er(n: int, c: float, seed: int | None = None, p: float | None = None) -> SubgoalGraph:
    """Upper-triangular random DAG; each pair i<j gets an edge with probability c*ln(n)/(n-1).

    ``p`` overrides the edge probability (used for degenerate checks).
    """
    if n < 2:
        raise ValueError("semi-ER graphs need n >= 2")
    if p is None:
        if not 0.0 < c < 1.0:
            raise ValueError("density parameter c must lie in (0, 1)")
        p = semi_er_probability(n, c)
    if not 0.0 <= p <= 1.0:
        raise ValueError("edge probability must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    draws = rng.random((n, n))
    src, dst = np.nonzero(np.triu(draws < p, k=1))
    return SubgoalGraph.from_edges(n, zip(src.tolist(), dst.tolist()), NodeKind.OR, final=n - 1)


def assign_kinds(graph: SubgoalGraph, mode: str, seed: int | None = None) -> SubgoalGraph:
    if mode == "all-and":
        kinds = [NodeKind.AND] * graph.n
    elif mode == "all-or":
        kinds = [NodeKind.OR] * graph.n
    elif mode == "random":
        rng = np.random.default_rng(seed)
        kinds = [NodeKind.AND if v else NodeKind.OR for v in rng.random(graph.n) < 0.5]
    else:
        raise ValueError(f"unknown kind mode {mode!r}")
    return graph.with_kinds(kinds)


# -- hierarchical structure ------------------------------------------------


@dataclass(frozen=True)
class HierarchicalStructure:
    edges: frozenset[Edge] = frozenset()
    level: Mapping[int, int] = field(default_factory=dict)

    def parents_of(self, node: int) -> tuple[int, ...]:
        return tuple(sorted(p for p, c in self.edges if c == node))

    def is_leveled(self, node: int) -> bool:
        return node in self.level


def update_hierarchy(
    hs: HierarchicalStructure,
    new_parent_edges: Iterable[Edge],
    children: Iterable[int] = (),
) -> HierarchicalStructure:
    """Add edges and level their children; ``children`` may list parentless nodes too."""
    new_edges = set(new_parent_edges)
    edges = set(hs.edges) | new_edges
    level = dict(hs.level)
    batch = set(children) | {c for _, c in new_edges}
    for p, c in new_edges:
        if p == c:
            raise ValueError(f"self-loop on {c}")
        if p not in level and p not in batch:
            raise ValueError(f"parent {p} of {c} has no level")
    parents_of: dict[int, set[int]] = {c: set() for c in batch}
    for p, c in edges:
        if c in parents_of:
            parents_of[c].add(p)
    pending = set(batch)
    for c in pending:
        level.pop(c, None)
    while pending:
        ready = [c for c in pending if all(p in level for p in parents_of[c])]
        if not ready:
            raise ValueError("hierarchy edges would form a cycle")
        for c in sorted(ready):
            ps = parents_of[c]
            level[c] = 0 if not ps else 1 + max(level[p] for p in ps)
            pending.discard(c)
    return HierarchicalStructure(frozenset(edges), level)


def remove_from_hierarchy(hs: HierarchicalStructure, nodes: Iterable[int]) -> HierarchicalStructure:
    drop = set(nodes)
    edges = frozenset((p, c) for p, c in hs.edges if p not in drop and c not in drop)
    level = {k: v for k, v in hs.level.items() if k not in drop}
    return HierarchicalStructure(edges, level)


def causal_order(hs: HierarchicalStructure, node: int) -> list[int]:
    if node not in hs.level:
        raise ValueError(f"node {node} is not leveled")
    parents: dict[int, list[int]] = {}
    for p, c in hs.edges:
        parents.setdefault(c, []).append(p)
    seen = {node}
    stack = [node]
    while stack:
        for p in parents.get(stack.pop(), ()):
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return sorted(seen, key=lambda v: (hs.level[v], v))


# -- discoverability -------------------------------------------------------


def all_assignments(n: int) -> np.ndarray:
    if n > MAX_ENUMERATION_NODES:
        raise CapacityError(f"exhaustive enumeration is capped at {MAX_ENUMERATION_NODES} nodes")
    codes = np.arange(2**n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(bool)


def one_sided_valid_assignments(graph: SubgoalGraph) -> np.ndarray:
    """All binary vectors where every achieved non-root node has its AND/OR rule satisfied.

    Parentless nodes are unconstrained: they are achieved directly by actions.
    """
    x = all_assignments(graph.n)
    enabled = graph.mechanism(x)
    has_parents = graph.indegree > 0
    violating = x & ~enabled & has_parents
    return x[~violating.any(axis=1)]


def discoverable_parents(graph: SubgoalGraph) -> dict[int, frozenset[int]]:
    valid = one_sided_valid_assignments(graph)
    out: dict[int, frozenset[int]] = {}
    for i in range(graph.n):
        ps = graph.parents[i]
        found = set()
        for j in ps:
            others = [k for k in ps if k != j]
            if graph.kinds[i] is NodeKind.OR:
                rest = ~valid[:, others].any(axis=1) if others else np.ones(len(valid), bool)
            else:
                rest = valid[:, others].all(axis=1) if others else np.ones(len(valid), bool)
            on = (valid[:, j] & rest).any()
            off = (~valid[:, j] & rest).any()
            if on and off:
                found.add(j)
        out[i] = frozenset(found)
    return out


def discoverable_graph(graph: SubgoalGraph) -> SubgoalGraph:
    disc = discoverable_parents(graph)
    edges = [(p, c) for c, ps in disc.items() for p in ps]
    return SubgoalGraph.from_edges(graph.n, edges, graph.kinds, graph.final, graph.names)


# -- metrics ---------------------------------------------------------------


@dataclass(frozen=True)
class ShdReport:
    missing: int
    extra: int

    @property
    def shd(self) -> int:
        return self.missing + self.extra


def shd(estimate: Iterable[Edge], truth: Iterable[Edge]) -> ShdReport:
    est, tru = set(estimate), set(truth)
    return ShdReport(missing=len(tru - est), extra=len(est - tru))


# -- enumeration helpers -------------------------------------------------


def enumerate_ordered_dags(n: int) -> Iterable[frozenset[Edge]]:
    """Every DAG on n nodes whose edges point from lower to higher index."""
    pairs = list(itertools.combinations(range(n), 2))
    for mask in range(2 ** len(pairs)):
        yield frozenset(pr for k, pr in enumerate(pairs) if mask >> k & 1)
