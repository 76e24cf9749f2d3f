import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hrc.ascm import (
    NOISY,
    AscmConfig,
    AscmEnv,
    AscmState,
    Dataset,
    Outcome,
    ascm_step,
    collect_interventional,
    rollout,
)
from hrc.graph import NodeKind, SubgoalGraph, one_sided_valid_assignments
from hrc.gridworld import (
    PICKAXE,
    STONE,
    WOOD,
    grid_step,
    grid_subgoal_vector,
    parse_layout,
    scripted_solution,
)
from hrc.scenarios import hidden_edge, minicraft

from conftest import small_dags

AND, OR = NodeKind.AND, NodeKind.OR
RNG = np.random.default_rng


class TestStep:
    def test_and_fires(self):
        g = minicraft()
        s = ascm_step(g, AscmState(np.array([1, 1, 0], bool)), (), RNG(0), AscmConfig())
        assert s.x[2] and s.t == 1

    def test_or_quiet(self):
        g = minicraft(OR)
        s = ascm_step(g, AscmState(np.zeros(3, bool)), (), RNG(0), AscmConfig(mode=NOISY))
        assert not s.x[2]

    def test_persistence_beats_noise(self):
        g = minicraft()
        cfg = AscmConfig(noise_rho=0.49)
        rng = RNG(1)
        for _ in range(200):
            s = ascm_step(g, AscmState(np.ones(3, bool)), (), rng, cfg)
            assert s.x.all()

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ascm_step(minicraft(), AscmState(np.zeros(2, bool)), (), RNG(0), AscmConfig())

    @pytest.mark.parametrize("kw", [dict(noise_rho=0.5), dict(mode="x"), dict(horizon_H=0),
                                    dict(explore_delta=0), dict(intervention_success=1.5)])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            AscmConfig(**kw)

    @given(small_dags(max_n=8), st.integers(0, 2**32 - 1))
    def test_persistent_monotone(self, g, seed):
        rng = RNG(seed)
        x0 = rng.random(g.n) < 0.5
        states = rollout(g, 15, AscmConfig(noise_rho=0.2), rng, x0)
        for a, b in zip(states, states[1:]):
            assert not (a.x & ~b.x).any()

    @given(small_dags(max_n=8), st.integers(0, 2**32 - 1))
    def test_noiseless_noisy_mode_is_mechanism(self, g, seed):
        x = RNG(seed).random(g.n) < 0.5
        states = rollout(g, 6, AscmConfig(mode=NOISY), RNG(seed), x)
        for a, b in zip(states, states[1:]):
            assert np.array_equal(b.x, g.mechanism(a.x))

    def test_flip_rate(self):
        rho, N = 0.1, 20000
        g = SubgoalGraph.from_edges(3, [(0, 2), (1, 2)], [OR, OR, AND])
        cfg = AscmConfig(noise_rho=rho, mode=NOISY)
        rng = RNG(5)
        # parents already at 1, so the mechanism says 1 and only noise can leave the child at 0
        flips = 0
        for _ in range(N):
            s = ascm_step(g, AscmState(np.array([1, 1, 0], bool)), {(0, 1), (1, 1)}, rng, cfg)
            flips += not s.x[2]
        assert abs(flips / N - rho) <= 3 * np.sqrt(rho * (1 - rho) / N)


class TestIntervene:
    def test_forcing_persists(self):
        env = AscmEnv(minicraft(), AscmConfig(mode=NOISY), seed=0)
        env.intervene(0, 1)
        for _ in range(5):
            env.step()
            assert env.x[0]

    def test_zero_forcing_overrides(self):
        env = AscmEnv(minicraft(), AscmConfig(), seed=0)
        env.intervene(0, 1)
        env.intervene(1, 1)
        env.intervene(2, 0)
        for _ in range(4):
            env.step()
        assert env.x[0] and env.x[1] and not env.x[2]

    def test_clear_resumes_mechanism(self):
        env = AscmEnv(minicraft(), AscmConfig(mode=NOISY), seed=0)
        env.intervene(0, 1)
        env.step()
        env.clear(0)
        env.step()
        assert not env.x[0]

    def test_invalid(self):
        env = AscmEnv(minicraft())
        with pytest.raises(ValueError):
            env.intervene(3, 1)
        with pytest.raises(ValueError):
            env.intervene(0, 2)

    def test_pursue_blocked_without_prerequisite(self):
        env = AscmEnv(minicraft(), seed=0)
        traj = []
        assert env.pursue(2, {0, 2}, traj, 50, "intervention") is Outcome.BLOCKED

    def test_pursue_achieves_prerequisites(self):
        env = AscmEnv(minicraft(), seed=0)
        traj = []
        assert env.pursue(2, {0, 1, 2}, traj, 50, "intervention") is Outcome.ACHIEVED
        assert env.x.all() and len(traj) == 3


class TestCollect:
    def test_root_flips_once(self):
        env = AscmEnv(minicraft(), seed=0)
        data = collect_interventional(env, {0}, 10)
        assert len(data.trajectories) == 10
        for traj in data.trajectories:
            assert sum(int(not tr.x_before[0] and tr.x_after[0]) for tr in traj) == 1

    def test_pickaxe_follows_both(self):
        cfg = AscmConfig(explore_delta=5)
        env = AscmEnv(minicraft(), cfg, seed=1)
        data = collect_interventional(env, {0, 1}, 20)
        for traj in data.trajectories:
            both = next(k for k, tr in enumerate(traj) if tr.x_after[0] and tr.x_after[1])
            fired = next(k for k, tr in enumerate(traj) if tr.x_after[2])
            assert 0 < fired - both <= cfg.explore_delta

    def test_zero_trajectories(self):
        assert len(collect_interventional(AscmEnv(minicraft()), {0}, 0)) == 0

    def test_empty_set(self):
        with pytest.raises(ValueError):
            collect_interventional(AscmEnv(minicraft()), set(), 3)

    def test_deterministic(self):
        a = collect_interventional(AscmEnv(hidden_edge(), AscmConfig(noise_rho=0.1), 4), {0, 1}, 5)
        b = collect_interventional(AscmEnv(hidden_edge(), AscmConfig(noise_rho=0.1), 4), {0, 1}, 5)
        assert a.to_csv() == b.to_csv()

    def test_states_stay_valid(self):
        # prerequisite-respecting forcing keeps every visited state one-sided valid
        g = hidden_edge()
        valid = {tuple(r) for r in one_sided_valid_assignments(g).astype(int)}
        data = collect_interventional(AscmEnv(g, seed=3), {0, 1, 2}, 30)
        for tr in data.transitions():
            assert tuple(tr.x_after.astype(int)) in valid

    def test_csv_round_trip(self):
        data = collect_interventional(AscmEnv(minicraft(), AscmConfig(explore_delta=2), 0), {0, 1}, 3)
        text = data.to_csv()
        assert text.splitlines()[0] == "t,trajectory_id,forced_mask,x_0,x_1,x_2"
        back = Dataset.from_csv(text)
        assert back.to_csv() == text
        assert len(back) == len(data)


class TestGrid:
    LAYOUT = "AW.\n...\n..S\n"

    def test_pick(self):
        w = parse_layout(self.LAYOUT)
        grid_step(w, "right")
        grid_step(w, "pick")
        assert w.backpack[WOOD] == 1 and (0, 1) not in w.resource_cells
        assert grid_subgoal_vector(w).tolist() == [True, False, False]

    def test_craft_needs_both(self):
        w = parse_layout(self.LAYOUT)
        w.backpack = [1, 0, 0]
        grid_step(w, "craft")
        assert w.backpack == [1, 0, 0]

    def test_craft_consumes(self):
        w = parse_layout(self.LAYOUT)
        for a in scripted_solution(w):
            _, done = grid_step(w, a)
        assert w.backpack == [0, 0, 1] and done
        assert grid_subgoal_vector(w).tolist() == [True, True, True]

    def test_fresh(self):
        assert not grid_subgoal_vector(parse_layout(self.LAYOUT)).any()

    def test_walls_clip(self):
        w = parse_layout(self.LAYOUT)
        grid_step(w, "up")
        grid_step(w, "left")
        assert w.agent == (0, 0)

    def test_budget(self):
        w = parse_layout(self.LAYOUT, step_budget=3)
        dones = [grid_step(w, "up")[1] for _ in range(3)]
        assert dones == [False, False, True]

    @pytest.mark.parametrize("text", ["", "AW\nS", "W..\n.S.", "A.X", "AA."])
    def test_bad_layouts(self, text):
        with pytest.raises(ValueError):
            parse_layout(text)

    def test_abstraction_sound(self):
        # the subgoal trace of a scripted episode never violates the mini-craft mechanism
        g = minicraft()
        order = [WOOD, STONE, PICKAXE]
        w = parse_layout(self.LAYOUT)
        prev = grid_subgoal_vector(w)
        for a in scripted_solution(w):
            grid_step(w, a)
            cur = grid_subgoal_vector(w)
            assert not (prev & ~cur).any()
            x = np.array([cur[STONE], cur[WOOD], cur[PICKAXE]])
            px = np.array([prev[STONE], prev[WOOD], prev[PICKAXE]])
            if x[2] and not px[2]:
                assert g.mechanism(px)[2]
            prev = cur
        assert prev[order].all()
