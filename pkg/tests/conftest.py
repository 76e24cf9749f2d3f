import numpy as np
from hypothesis import strategies as st

from hrc.graph import NodeKind, SubgoalGraph


@st.composite
def small_dags(draw, min_n=1, max_n=7, kinds=None):
    """Upper-triangular DAGs with the last node as the final subgoal."""
    n = draw(st.integers(min_n, max_n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    edges = [pr for pr, keep in zip(pairs, mask) if keep]
    if kinds is None:
        ks = draw(st.lists(st.sampled_from([NodeKind.AND, NodeKind.OR]), min_size=n, max_size=n))
    else:
        ks = [kinds] * n
    return SubgoalGraph.from_edges(n, edges, ks, final=n - 1)


def random_dag(rng: np.random.Generator, n: int, p: float, kinds: str = "random") -> SubgoalGraph:
    upper = np.triu(rng.random((n, n)) < p, k=1)
    src, dst = np.nonzero(upper)
    if kinds == "random":
        ks = [NodeKind.AND if v else NodeKind.OR for v in rng.random(n) < 0.5]
    else:
        ks = [NodeKind(kinds)] * n
    return SubgoalGraph.from_edges(n, zip(src.tolist(), dst.tolist()), ks, final=n - 1)
