"""Abstracted structural causal model over subgoal variables, with do-interventions
and the interventional data collection used by the discovery loop."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .graph import NodeKind, SubgoalGraph

PERSISTENT = "persistent"
NOISY = "noisy"


@dataclass(frozen=True)
class AscmConfig:
    noise_rho: float = 0.0
    mode: str = PERSISTENT
    horizon_H: int = 200
    explore_delta: int = 20
    intervention_success: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise_rho < 0.5:
            raise ValueError("noise_rho must lie in [0, 0.5)")
        if self.mode not in (PERSISTENT, NOISY):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.horizon_H < 1 or self.explore_delta < 1:
            raise ValueError("horizon_H and explore_delta must be positive")
        if not 0.0 <= self.intervention_success <= 1.0:
            raise ValueError("intervention_success must lie in [0, 1]")


@dataclass(frozen=True)
class AscmState:
    x: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AscmState":
        return cls(np.zeros(n, dtype=bool), 0)


Forcing = frozenset  # of (node, value) pairs


@dataclass(frozen=True)
class Transition:
    x_before: np.ndarray
    x_after: np.ndarray
    forced: frozenset = frozenset()
    phase: str = "exploration"

    def forced_nodes(self) -> set[int]:
        return {node for node, _ in self.forced}


Trajectory = list[Transition]


@dataclass
class Dataset:
    n: int
    mode: str = PERSISTENT
    trajectories: list[Trajectory] = field(default_factory=list)

    def transitions(self) -> Iterator[Transition]:
        for traj in self.trajectories:
            yield from traj

    def __len__(self) -> int:
        return sum(len(tr) for tr in self.trajectories)

    def extend(self, other: "Dataset") -> None:
        if other.n != self.n:
            raise ValueError("datasets disagree on the number of variables")
        self.trajectories.extend(other.trajectories)

    def phase_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for tr in self.transitions():
            counts[tr.phase] = counts.get(tr.phase, 0) + 1
        return counts

    # -- csv ----------------------------------------------------------

    def header(self) -> list[str]:
        return ["t", "trajectory_id", "forced_mask"] + [f"x_{i}" for i in range(self.n)]

    def write_csv(self, fh: TextIO) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(self.header())
        for k, traj in enumerate(self.trajectories):
            if not traj:
                continue
            states = [traj[0].x_before] + [tr.x_after for tr in traj]
            masks = [_mask(tr.forced, self.n) for tr in traj] + ["-" * self.n]
            for t, (x, m) in enumerate(zip(states, masks)):
                writer.writerow([t, k, m] + [int(v) for v in x])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, mode: str = PERSISTENT) -> "Dataset":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        n = len(header) - 3
        rows: dict[int, list[tuple[int, str, np.ndarray]]] = {}
        for row in reader:
            t, k, mask = int(row[0]), int(row[1]), row[2]
            rows.setdefault(k, []).append((t, mask, np.array([v == "1" for v in row[3:]])))
        data = cls(n, mode)
        for k in sorted(rows):
            seq = sorted(rows[k], key=lambda r: r[0])
            traj = [
                Transition(a[2], b[2], _unmask(a[1]))
                for a, b in zip(seq, seq[1:])
            ]
            data.trajectories.append(traj)
        return data


def _mask(forced: Iterable[tuple[int, int]], n: int) -> str:
    chars = ["-"] * n
    for node, value in forced:
        chars[node] = str(int(value))
    return "".join(chars)


def _unmask(mask: str) -> frozenset:
    return frozenset((i, int(ch)) for i, ch in enumerate(mask) if ch != "-")


# -- dynamics ------------------------------------------------------------


def ascm_step(
    graph: SubgoalGraph,
    state: AscmState,
    forced: Iterable[tuple[int, int]],
    rng: np.random.Generator,
    config: AscmConfig,
) -> AscmState:
    x = np.asarray(state.x, dtype=bool)
    if x.shape != (graph.n,):
        raise ValueError(f"state has length {x.shape}, graph has {graph.n} nodes")
    theta = graph.mechanism(x)
    if config.noise_rho > 0:
        theta = theta ^ (rng.random(graph.n) < config.noise_rho)
    nxt = x | theta if config.mode == PERSISTENT else theta
    for node, value in forced:
        nxt[node] = bool(value)
    return AscmState(nxt, state.t + 1)


class Outcome(Enum):
    ACHIEVED = "achieved"
    FAILED = "failed"
    BLOCKED = "blocked"


class AscmEnv:
    """Stateful A-SCM simulator owning its RNG, forcing table and a step counter."""

    def __init__(self, graph: SubgoalGraph, config: AscmConfig | None = None, seed: int | None = None):
        self.graph = graph
        self.config = config or AscmConfig()
        self.rng = np.random.default_rng(seed)
        self.total_steps = 0
        self.state = AscmState.zeros(graph.n)
        self.forcing: dict[int, int] = {}

    @property
    def x(self) -> np.ndarray:
        return self.state.x

    def reset(self) -> AscmState:
        self.state = AscmState.zeros(self.graph.n)
        self.forcing = {}
        return self.state

    def intervene(self, node: int, value: int) -> None:
        if not 0 <= node < self.graph.n or value not in (0, 1):
            raise ValueError(f"invalid intervention do({node}={value})")
        self.forcing[node] = value

    def clear(self, node: int) -> None:
        self.forcing.pop(node, None)

    def step(self, phase: str = "exploration") -> Transition:
        forced = frozenset(self.forcing.items())
        before = self.state.x.copy()
        self.state = ascm_step(self.graph, self.state, forced, self.rng, self.config)
        self.total_steps += 1
        return Transition(before, self.state.x.copy(), forced, phase)

    def enabled(self, node: int) -> bool:
        ps = self.graph.parents[node]
        if not ps:
            return True
        on = self.x[list(ps)]
        return bool(on.all() if self.graph.kinds[node] is NodeKind.AND else on.any())

    def next_prerequisite(self, node: int, allowed: set[int]) -> int | None:
        """A parent the agent must achieve before ``node`` can fire, or None if none is usable."""
        ps = self.graph.parents[node]
        missing = [p for p in ps if not self.x[p]]
        if self.graph.kinds[node] is NodeKind.AND:
            return missing[0] if missing and missing[0] in allowed else None
        usable = [p for p in missing if p in allowed]
        return usable[0] if usable else None

    def pursue(
        self,
        node: int,
        allowed: set[int],
        trajectory: Trajectory,
        horizon: int,
        phase: str,
        _stack: frozenset = frozenset(),
    ) -> Outcome:
        """Make one attempt at achieving ``node``, first achieving prerequisites among ``allowed``.

        Each attempted forcing is a single step landing with probability
        ``intervention_success``.
        """
        if self.x[node]:
            return Outcome.ACHIEVED
        while not self.enabled(node):
            if len(trajectory) >= horizon:
                return Outcome.FAILED
            prereq = self.next_prerequisite(node, allowed)
            if prereq is None or prereq in _stack:
                trajectory.append(self.step(phase))
                return Outcome.BLOCKED
            sub = self.pursue(prereq, allowed, trajectory, horizon, phase, _stack | {node})
            if sub is not Outcome.ACHIEVED:
                return sub
        if len(trajectory) >= horizon:
            return Outcome.FAILED
        if self.rng.random() < self.config.intervention_success:
            self.intervene(node, 1)
        trajectory.append(self.step(phase))
        return Outcome.ACHIEVED if self.x[node] else Outcome.FAILED


def collect_interventional(
    env: AscmEnv,
    intervention_set: Iterable[int],
    T: int,
    config: AscmConfig | None = None,
) -> Dataset:
    """Interventional sampling: force random unachieved members, then watch the system evolve."""
    members = sorted(set(intervention_set))
    if not members:
        raise ValueError("intervention set must be nonempty")
    cfg = config or env.config
    allowed = set(members)
    data = Dataset(env.graph.n, cfg.mode)
    for _ in range(T):
        env.reset()
        traj: Trajectory = []
        blocked: set[int] = set()
        while len(traj) < cfg.horizon_H:
            todo = [g for g in members if not env.x[g] and g not in blocked]
            if not todo:
                break
            g = todo[int(env.rng.integers(len(todo)))]
            if env.pursue(g, allowed, traj, cfg.horizon_H, "intervention") is Outcome.BLOCKED:
                blocked.add(g)
            for _ in range(min(cfg.explore_delta, cfg.horizon_H - len(traj))):
                traj.append(env.step("exploration"))
        data.trajectories.append(traj)
    return data


def rollout(
    graph: SubgoalGraph,
    steps: int,
    config: AscmConfig,
    rng: np.random.Generator,
    x0: Sequence[int] | None = None,
    forced: Iterable[tuple[int, int]] = (),
) -> list[AscmState]:
    state = AscmState(np.zeros(graph.n, bool) if x0 is None else np.asarray(x0, bool).copy())
    forced = frozenset(forced)
    out = [state]
    for _ in range(steps):
        state = ascm_step(graph, state, forced, rng, config)
        out.append(state)
    return out
