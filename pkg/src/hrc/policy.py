"""Tabular goal-conditioned Q-learning and recursive hierarchical execution on the mini-craft grid."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ascm import PERSISTENT, Dataset, Trajectory, Transition
from .framework import HrcConfig
from .graph import HierarchicalStructure
from .gridworld import ACTIONS, DEFAULT_LAYOUT, GridWorld, parse_layout, subgoal_graph

SELF = -1  # option that runs the primitive policy for the target itself
PHASE_CODES = {"pretrain": 1, "collect": 2, "train": 3, "eval": 4}

StepHook = Callable[[np.ndarray, np.ndarray], None]


@dataclass
class TabularPolicy:
    """Q-tables for primitive actions and for subgoal options, keyed by (state key, subgoal)."""

    lr: float = 0.1
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_min: float = 0.05
    eps_decay: float = 0.9
    q: dict[tuple, np.ndarray] = field(default_factory=dict)
    episodes: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0 < self.lr <= 1 and 0 <= self.gamma <= 1):
            raise ValueError("learning rate must lie in (0, 1] and discount in [0, 1]")
        if not 0 <= self.eps_min <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_min <= eps_start <= 1")

    def epsilon(self, goal: int) -> float:
        return max(self.eps_min, self.eps_start * self.eps_decay ** self.episodes.get(goal, 0))

    def finish_episode(self, goal: int) -> None:
        self.episodes[goal] = self.episodes.get(goal, 0) + 1

    def values(self, table: str, key, goal: int, size: int) -> np.ndarray:
        k = (table, key, goal)
        if k not in self.q:
            self.q[k] = np.zeros(size)
        return self.q[k]

    def pick(self, table: str, key, goal: int, choices: list[int], eps: float,
             rng: np.random.Generator, size: int) -> int:
        """Epsilon-greedy over ``choices`` (indices into the table row); ties broken at random."""
        if rng.random() < eps:
            return choices[int(rng.integers(len(choices)))]
        vals = self.values(table, key, goal, size)[choices]
        best = np.flatnonzero(vals == vals.max())
        return choices[int(best[int(rng.integers(len(best)))])]

    def update(self, table: str, key, goal: int, idx: int, reward: float, next_key,
               terminal: bool, size: int, discount: float) -> None:
        row = self.values(table, key, goal, size)
        target = reward
        if not terminal:
            target += discount * self.values(table, next_key, goal, size).max()
        row[idx] += self.lr * (target - row[idx])


def subgoal_options(hs: HierarchicalStructure, subgoal: int) -> tuple[int, ...]:
    """Subgoals a higher-level policy may emit while pursuing ``subgoal``: its parents in the hierarchy."""
    return hs.parents_of(subgoal)


@dataclass
class Execution:
    policy: TabularPolicy
    hs: HierarchicalStructure
    config: HrcConfig
    rng: np.random.Generator
    learn: bool = False
    greedy: bool = False
    on_step: StepHook | None = None
    hindsight_goals: tuple[int, ...] = ()

    def eps(self, goal: int) -> float:
        if self.greedy:
            return 0.0
        return self.policy.epsilon(goal) if self.learn else self.policy.eps_min


def _primitive(run: Execution, world: GridWorld, goal: int, budget: int) -> None:
    pol = run.policy
    size = len(ACTIONS)
    actions = list(range(size))
    goals = sorted({goal, *run.hindsight_goals})
    for _ in range(budget):
        if world.done or world.achieved[goal]:
            return
        key = world.key()
        before = world.subgoal_vector()
        a = pol.pick("prim", key, goal, actions, run.eps(goal), run.rng, size)
        world.step(a)
        after = world.subgoal_vector()
        if run.on_step:
            run.on_step(before, after)
        if run.learn:
            nxt = world.key()
            for g in goals:
                if before[g]:
                    continue
                pol.update("prim", key, g, a, float(after[g]), nxt, bool(after[g]) or world.done,
                           size, pol.gamma)


def execute_hierarchical_policy(
    policy: TabularPolicy,
    world: GridWorld,
    subgoal: int,
    hs: HierarchicalStructure,
    config: HrcConfig,
    rng: np.random.Generator | None = None,
    learn: bool = False,
    greedy: bool = False,
    on_step: StepHook | None = None,
    run: Execution | None = None,
) -> tuple[bool, bool, int]:
    """Pursue ``subgoal`` from the current world state; returns (episode done, achieved, probes)."""
    if run is None:
        rng = rng if rng is not None else np.random.default_rng()
        run = Execution(policy, hs, config, rng, learn, greedy, on_step,
                        tuple(g for g, lv in hs.level.items() if lv == 0))
    if world.achieved[subgoal]:
        return world.done, True, 0
    if not hs.is_leveled(subgoal):
        raise ValueError(f"subgoal {subgoal} has no level in the hierarchy")
    start = world.steps
    if hs.level[subgoal] == 0:
        _primitive(run, world, subgoal, config.max_steps)
        return world.done, bool(world.achieved[subgoal]), world.steps - start

    parents = list(subgoal_options(hs, subgoal))
    size = len(parents) + 1
    slot = {o: i for i, o in enumerate(parents + [SELF])}
    for _ in range(config.max_actions):
        if world.done or world.achieved[subgoal]:
            break
        choices = [slot[p] for p in parents if not world.achieved[p]] + [slot[SELF]]
        key = world.key()
        before = world.steps
        idx = policy.pick("opt", key, subgoal, choices, run.eps(subgoal), run.rng, size)
        option = (parents + [SELF])[idx]
        if option == SELF:
            _primitive(run, world, subgoal, config.max_actions)
        else:
            execute_hierarchical_policy(policy, world, option, hs, config, run=run)
        if run.learn:
            got = bool(world.achieved[subgoal])
            k = max(world.steps - before, 1)
            policy.update("opt", key, subgoal, idx, float(got), world.key(), got or world.done,
                          size, policy.gamma ** k)
    return world.done, bool(world.achieved[subgoal]), world.steps - start


@dataclass(frozen=True)
class GridConfig:
    layout: str = DEFAULT_LAYOUT
    lr: float = 0.1
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_min: float = 0.05
    eps_decay: float = 0.9
    explore_delta: int = 20
    max_rounds: int = 50
    eval_episodes: int = 100


class GridTask:
    """Gridworld environment for the discovery loop; every primitive step is one probe.

    Each phase draws from its own generator keyed by (seed, phase, intervention set,
    target), so two runs that reach the same phase see the same randomness.
    """

    def __init__(self, grid: GridConfig | None = None, seed: int = 0):
        self.grid = grid or GridConfig()
        self.seed = seed
        self.truth = subgoal_graph()
        self.n = self.truth.n
        self.final = self.truth.final
        self.world = parse_layout(self.grid.layout)
        self.policy = TabularPolicy(self.grid.lr, self.grid.gamma, self.grid.eps_start,
                                    self.grid.eps_min, self.grid.eps_decay)
        self.hs = HierarchicalStructure()
        self.total_steps = 0

    @property
    def steps(self) -> int:
        return self.total_steps

    def _rng(self, phase: str, IS=(), target: int = -1) -> np.random.Generator:
        return np.random.default_rng([self.seed, PHASE_CODES[phase], *sorted(IS), target + 1, len(IS)])

    def _reset(self, config: HrcConfig) -> GridWorld:
        self.world.reset()
        self.world.step_budget = config.max_steps
        return self.world

    def _count(self, before, after) -> None:
        self.total_steps += 1

    def _train_goal(self, goal: int, IS, hs, config: HrcConfig, rng) -> float:
        """Rounds of T' episodes until the success ratio reaches the threshold or rounds run out."""
        ratio = 0.0
        for _ in range(self.grid.max_rounds):
            hits = 0
            for _ in range(config.T_prime):
                world = self._reset(config)
                run = Execution(self.policy, hs, config, rng, learn=True, on_step=self._count,
                                hindsight_goals=tuple(g for g, lv in hs.level.items() if lv == 0))
                while not world.done and not world.achieved[goal]:
                    pending = [u for u in sorted(IS) if not world.achieved[u] and hs.is_leveled(u)]
                    before = world.steps
                    if pending and rng.random() < config.mix_p:
                        u = pending[int(rng.integers(len(pending)))]
                        execute_hierarchical_policy(self.policy, world, u, hs, config, run=run)
                    else:
                        execute_hierarchical_policy(self.policy, world, goal, hs, config, run=run)
                    if world.steps == before:
                        break
                hits += bool(world.achieved[goal])
                self.policy.finish_episode(goal)
            ratio = hits / config.T_prime
            if ratio >= config.phi_causal:
                break
        return ratio

    def pretrain(self, config: HrcConfig) -> tuple[set[int], dict[str, int]]:
        before = self.total_steps
        roots = self.truth.roots
        hs = HierarchicalStructure(frozenset(), {r: 0 for r in roots})
        passed = {r for r in roots
                  if self._train_goal(r, (), hs, config, self._rng("pretrain", (), r)) >= config.phi_causal}
        return passed, {"training": self.total_steps - before}

    def collect(self, IS: list[int], hs: HierarchicalStructure, config: HrcConfig
                ) -> tuple[Dataset, dict[str, int]]:
        rng = self._rng("collect", IS)
        data = Dataset(self.n, PERSISTENT)
        counts = {"intervention": 0, "exploration": 0}
        members = sorted(set(IS))
        for _ in range(config.T):
            world = self._reset(config)
            traj: Trajectory = []

            def hook(before, after, phase="intervention", forced=frozenset()):
                self.total_steps += 1
                counts[phase] += 1
                traj.append(Transition(before, after, forced, phase))

            blocked: set[int] = set()
            while not world.done:
                todo = [g for g in members if not world.achieved[g] and g not in blocked]
                if not todo:
                    break
                g = todo[int(rng.integers(len(todo)))]
                forced = frozenset({(g, 1)})
                _, ok, _ = execute_hierarchical_policy(
                    self.policy, world, g, hs, config, rng,
                    on_step=lambda b, a, f=forced: hook(b, a, "intervention", f))
                if not ok:
                    blocked.add(g)
                for _ in range(self.grid.explore_delta):
                    if world.done:
                        break
                    before = world.subgoal_vector()
                    world.step(int(rng.integers(len(ACTIONS))))
                    hook(before, world.subgoal_vector(), "exploration")
            data.trajectories.append(traj)
        return data, counts

    def train(self, targets, IS, hs, config):
        before = self.total_steps
        ratios = {g: self._train_goal(g, IS, hs, config, self._rng("train", IS, g))
                  for g in sorted(targets)}
        return ratios, {"training": self.total_steps - before}

    def evaluate(self, hs: HierarchicalStructure, config: HrcConfig, episodes: int | None = None,
                 goal: int | None = None) -> float:
        """Greedy success ratio on a private copy of the world; does not touch the probe counter."""
        goal = self.final if goal is None else goal
        if not hs.is_leveled(goal):
            return 0.0
        episodes = self.grid.eval_episodes if episodes is None else episodes
        rng = self._rng("eval")
        world = copy.deepcopy(self.world)
        hits = 0
        for _ in range(episodes):
            world.reset()
            world.step_budget = config.max_steps
            execute_hierarchical_policy(self.policy, world, goal, hs, config, rng, greedy=True)
            hits += bool(world.achieved[goal])
        return hits / episodes
