"""Small hand-built subgoal graphs used in examples, tests and the CLI."""

from __future__ import annotations

from .graph import NodeKind, SubgoalGraph

AND, OR = NodeKind.AND, NodeKind.OR


def minicraft(pickaxe_kind: NodeKind = AND) -> SubgoalGraph:
    """Stone (0) and wood (1) feed the pickaxe (2)."""
    return SubgoalGraph.from_edges(
        3, [(0, 2), (1, 2)], [OR, OR, pickaxe_kind], final=2, names=["S", "W", "P"]
    )


def minicraft_chain() -> SubgoalGraph:
    """Wood enables stone, stone enables the pickaxe."""
    return SubgoalGraph.from_edges(
        3, [(1, 0), (0, 2)], [OR, OR, OR], final=2, names=["S", "W", "P"]
    )


def branching_craft() -> SubgoalGraph:
    """Stone leads straight to the final item while wood fans out to three side items."""
    names = ["S", "W", "P", "K", "H", "F"]
    edges = [(0, 5), (1, 2), (1, 3), (1, 4)]
    return SubgoalGraph.from_edges(6, edges, OR, final=5, names=names)


def hidden_edge() -> SubgoalGraph:
    """X1 -> X2 and X1, X2 -> X3, where X3 needs both; the X1 -> X3 edge is invisible in valid data."""
    return SubgoalGraph.from_edges(
        3, [(0, 1), (0, 2), (1, 2)], [OR, OR, AND], final=2, names=["X1", "X2", "X3"]
    )


def hybrid_example() -> SubgoalGraph:
    """Eleven-node graph with two competing routes to the final node g11."""
    names = [f"g{i}" for i in range(1, 12)]
    g = {name: k for k, name in enumerate(names)}
    edges = [
        ("g1", "g2"), ("g1", "g3"), ("g1", "g4"), ("g1", "g5"),
        ("g2", "g6"), ("g3", "g6"), ("g3", "g7"),
        ("g4", "g8"), ("g5", "g8"),
        ("g6", "g9"), ("g6", "g10"), ("g9", "g10"),
        ("g10", "g11"), ("g8", "g11"),
    ]
    kinds = [OR] * 11
    for name in ("g6", "g8", "g10"):
        kinds[g[name]] = AND
    return SubgoalGraph.from_edges(
        11, [(g[a], g[b]) for a, b in edges], kinds, final=g["g11"], names=names
    )
