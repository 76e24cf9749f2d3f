"""Mini-craft gridworld: gather wood and stone, then craft a pickaxe."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import NodeKind, SubgoalGraph

ACTIONS = ("up", "down", "left", "right", "pick", "craft")
MOVES = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}
RESOURCES = ("wood", "stone", "pickaxe")
WOOD, STONE, PICKAXE = range(3)
LAYOUT_LETTERS = {"W": WOOD, "S": STONE}

DEFAULT_LAYOUT = """\
A.W..
.....
.....
.....
....S
"""


@dataclass
class GridWorld:
    """Mutable gridworld state.

    ``achieved`` is sticky: crafting consumes wood and stone but the
    corresponding subgoals stay achieved for the rest of the episode.
    """

    width: int
    height: int
    agent: tuple[int, int]
    resource_cells: dict[tuple[int, int], int]
    backpack: list[int] = field(default_factory=lambda: [0, 0, 0])
    achieved: list[bool] = field(default_factory=lambda: [False, False, False])
    steps: int = 0
    step_budget: int = 100
    start: tuple[tuple[int, int], dict[tuple[int, int], int]] | None = None

    def __post_init__(self) -> None:
        if not (0 <= self.agent[0] < self.height and 0 <= self.agent[1] < self.width):
            raise ValueError("agent outside the grid")
        if self.start is None:
            self.start = (self.agent, dict(self.resource_cells))

    def reset(self) -> None:
        self.agent, cells = self.start
        self.resource_cells = dict(cells)
        self.backpack = [0, 0, 0]
        self.achieved = [False, False, False]
        self.steps = 0

    @property
    def done(self) -> bool:
        return self.steps >= self.step_budget or self.achieved[PICKAXE]

    def step(self, action: str | int) -> bool:
        """Apply one primitive action in place; returns the episode-done flag."""
        name = ACTIONS[action] if isinstance(action, (int, np.integer)) else action
        if name in MOVES:
            dr, dc = MOVES[name]
            r = min(max(self.agent[0] + dr, 0), self.height - 1)
            c = min(max(self.agent[1] + dc, 0), self.width - 1)
            self.agent = (r, c)
        elif name == "pick":
            res = self.resource_cells.pop(self.agent, None)
            if res is not None:
                self.backpack[res] += 1
        elif name == "craft":
            if self.backpack[WOOD] >= 1 and self.backpack[STONE] >= 1:
                self.backpack[WOOD] -= 1
                self.backpack[STONE] -= 1
                self.backpack[PICKAXE] += 1
        else:
            raise ValueError(f"unknown action {action!r}")
        for i, count in enumerate(self.backpack):
            if count >= 1:
                self.achieved[i] = True
        self.steps += 1
        return self.done

    def subgoal_vector(self) -> np.ndarray:
        return np.array(self.achieved, dtype=bool)

    def key(self) -> tuple:
        """Tabular state key: agent cell plus backpack signature."""
        sig = tuple(min(c, 2) for c in self.backpack) + tuple(self.achieved)
        return (self.agent, sig)


def grid_step(world: GridWorld, action: str | int) -> tuple[GridWorld, bool]:
    done = world.step(action)
    return world, done


def grid_subgoal_vector(world: GridWorld) -> np.ndarray:
    return world.subgoal_vector()


def parse_layout(text: str, step_budget: int = 100) -> GridWorld:
    rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("layout must be a non-empty rectangle")
    agent = None
    cells: dict[tuple[int, int], int] = {}
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "A":
                if agent is not None:
                    raise ValueError("layout has more than one agent start")
                agent = (r, c)
            elif ch in LAYOUT_LETTERS:
                cells[(r, c)] = LAYOUT_LETTERS[ch]
            elif ch != ".":
                raise ValueError(f"unknown layout character {ch!r}")
    if agent is None:
        raise ValueError("layout has no agent start 'A'")
    return GridWorld(len(rows[0]), len(rows), agent, cells, step_budget=step_budget)


def subgoal_graph() -> SubgoalGraph:
    """Ground-truth subgoal structure of the gridworld (wood, stone -> pickaxe)."""
    return SubgoalGraph.from_edges(
        3, [(WOOD, PICKAXE), (STONE, PICKAXE)], [NodeKind.OR, NodeKind.OR, NodeKind.AND],
        final=PICKAXE, names=list(RESOURCES),
    )


def scripted_solution(world: GridWorld) -> list[str]:
    """A shortest action sequence collecting one wood and one stone, then crafting."""
    plan: list[str] = []
    pos = world.agent
    for res in (WOOD, STONE):
        target = min((cell for cell, r in world.resource_cells.items() if r == res),
                     key=lambda cell: abs(cell[0] - pos[0]) + abs(cell[1] - pos[1]))
        dr, dc = target[0] - pos[0], target[1] - pos[1]
        plan += ["down" if dr > 0 else "up"] * abs(dr)
        plan += ["right" if dc > 0 else "left"] * abs(dc)
        plan.append("pick")
        pos = target
    plan.append("craft")
    return plan
