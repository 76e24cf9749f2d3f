import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrc.graph import NodeKind, SubgoalGraph
from hrc.scenarios import branching_craft, hybrid_example, minicraft
from hrc.strategy import (
    INF,
    AstarState,
    EceQuery,
    astar_update,
    dynamic_dijkstra,
    estimate_ece,
    heuristic_table,
    hybrid_candidates,
    make_strategy,
    pick_causal_effect,
    pick_hybrid,
    pick_random,
    pick_shortest_path,
)

from conftest import small_dags

AND, OR = NodeKind.AND, NodeKind.OR
S, W, P = 0, 1, 2


class TestEce:
    def test_and_fires_with_other_parent(self):
        assert estimate_ece(minicraft(), EceQuery(frozenset({S}), frozenset(), P), {W}) == 1

    def test_and_blocked(self):
        assert estimate_ece(minicraft(), EceQuery(frozenset({S}), frozenset(), P), set()) == 0

    def test_no_path(self):
        g = SubgoalGraph.from_edges(3, [(0, 2)], OR)
        assert estimate_ece(g, EceQuery(frozenset({1}), frozenset(), 2), set()) == 0

    def test_target_forced_rejected(self):
        with pytest.raises(ValueError):
            EceQuery(frozenset({P}), frozenset(), P)

    @settings(max_examples=60)
    @given(small_dags(min_n=2, max_n=10, kinds=AND))
    def test_all_and_effect_iff_ancestor(self, g):
        target = g.final
        for v in range(g.n - 1):
            IS = set(g.roots) - {v}
            eff = estimate_ece(g, EceQuery(frozenset({v}), frozenset(), target, delta=None), IS)
            assert (eff > 0) == (v in g.ancestors(target))


class TestCausalEffect:
    def test_singleton(self):
        assert pick_causal_effect({W}, minicraft(), P, set())[0] == W

    def test_branching_prefers_direct_route(self):
        g = branching_craft()
        assert pick_causal_effect({0, 1}, g, g.final, set())[0] == 0

    def test_all_zero_lowest_index(self):
        g = SubgoalGraph.from_edges(4, [(0, 3)], AND)
        chosen, scores = pick_causal_effect({1, 2}, g, 3, set())
        assert chosen == 1 and set(scores.values()) == {0.0}

    def test_target_in_candidates(self):
        assert pick_causal_effect({S, P}, minicraft(), P, {W})[0] == P

    def test_empty(self):
        with pytest.raises(ValueError):
            pick_causal_effect(set(), minicraft(), P, set())

    @settings(max_examples=60)
    @given(small_dags(min_n=2, max_n=8), st.data())
    def test_choice_has_top_score(self, g, data):
        # the pick depends only on the ordering of scores, so positive rescaling cannot move it
        pool = list(range(g.n - 1))
        if not pool:
            return
        CS = set(data.draw(st.lists(st.sampled_from(pool), min_size=1, unique=True)))
        chosen, scores = pick_causal_effect(CS, g, g.final, set(g.roots) - CS)
        scaled = {v: 7.5 * s for v, s in scores.items()}
        assert math.isclose(scaled[chosen], max(scaled.values()))


class TestAstar:
    def test_unknown_child_cost(self):
        g = SubgoalGraph.from_edges(3, [(0, 1), (1, 2)], OR)
        state = astar_update(AstarState(), 0, g, {0}, 2)
        assert state.g_cost[1] == 2 and state.parent_pointer[1] == 0

    def test_branching_weights(self):
        g = branching_craft()
        state = astar_update(AstarState(), 1, g, {1}, g.final)
        assert all(state.g_cost[c] == 4 for c in (2, 3, 4))

    def test_unreachable_heuristic(self):
        g = branching_craft()
        assert dynamic_dijkstra(g, 1, g.final) == INF
        assert heuristic_table(g, g.final)[1] == INF
        assert heuristic_table(g, g.final)[0] == 2

    @given(small_dags(min_n=1, max_n=8))
    def test_table_matches_dijkstra(self, g):
        table = heuristic_table(g, g.final)
        assert table == [dynamic_dijkstra(g, v, g.final) for v in range(g.n)]

    def test_branching_prefers_direct_route(self):
        g = branching_craft()
        strat = make_strategy("shortest-path")
        assert strat.choose({0, 1}, [], g, g.final, np.random.default_rng(0)) == 0

    def test_all_infinite_lowest_index(self):
        assert pick_shortest_path(AstarState(), {4, 2, 7}) == 2

    def test_singleton(self):
        assert pick_shortest_path(AstarState(), {5}) == 5

    def test_deeper_node_wins_tie(self):
        state = AstarState(g_cost={1: 0.0, 2: 3.0}, h_cost={1: 3.0, 2: 0.0})
        assert pick_shortest_path(state, {1, 2}) == 2


class TestHybrid:
    def test_subset_heuristics(self):
        g = hybrid_example()
        found = {c.members: c for c in hybrid_candidates({1, 2, 3, 4}, g, g.final, {0}, {})}
        assert found[(1, 2)].H == 5
        assert found[(3, 4)].H == 3
        assert found[(1, 2, 3, 4)].H == 8

    def test_selects_cheaper_route(self):
        g = hybrid_example()
        queue: list[int] = []
        first = pick_hybrid({1, 2, 3, 4}, g, g.final, {0}, queue)
        assert first == 3 and queue == [4]
        assert pick_hybrid({1, 2, 4}, g, g.final, {0, 3}, queue) == 4 and not queue

    def test_singleton(self):
        assert pick_hybrid({S}, minicraft(OR), P, set(), []) == S

    def test_pure_and_queues_everything(self):
        g = minicraft()
        queue: list[int] = []
        found = hybrid_candidates({S, W}, g, P, set(), {})
        assert [c.members for c in found] == [(S, W)]
        assert pick_hybrid({S, W}, g, P, set(), queue) == S and queue == [W]

    def test_all_zero_falls_back(self):
        g = SubgoalGraph.from_edges(4, [(0, 3)], AND)
        assert pick_hybrid({1, 2}, g, 3, set(), []) == 1

    def test_subset_cap_falls_back(self):
        g = branching_craft()
        assert pick_hybrid({0, 1}, g, g.final, set(), [], subset_cap=1) == 0


class TestRandom:
    def test_singleton(self):
        assert pick_random({3}, np.random.default_rng(0)) == 3

    def test_balanced(self):
        rng = np.random.default_rng(12)
        draws = [pick_random({4, 9}, rng) for _ in range(10_000)]
        assert abs(draws.count(4) / 10_000 - 0.5) <= 0.015

    def test_reproducible(self):
        a = [pick_random(range(6), np.random.default_rng(3)) for _ in range(5)]
        b = [pick_random(range(6), np.random.default_rng(3)) for _ in range(5)]
        assert a == b

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            make_strategy("greedy")
