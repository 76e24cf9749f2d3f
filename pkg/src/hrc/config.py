"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .ssd import DEFAULT_LAMBDA_GRID


@dataclass
class ExperimentConfig:
    # graphs
    family: str = "tree"
    n: list[int] = field(default_factory=lambda: [13, 40, 121])
    b: list[int] = field(default_factory=lambda: [3])
    c: list[float] = field(default_factory=lambda: [0.5])
    p: float | None = None
    kinds: str = "random"
    seeds: int = 10
    # strategies and search
    strategies: list[str] = field(default_factory=lambda: ["random", "causal-effect"])
    strategy_model: str = "truth"
    error_schedule: bool = False
    ece_delta: int | None = None
    subset_cap: int = 12
    # costs
    T: int | None = None
    T_prime: int | None = None
    w: float = 1.0
    runs: int = 1000
    node_cap: int = 20
    # discovery
    engines: list[str] = field(default_factory=lambda: ["l1", "oracle"])
    lam_grid: list[float] = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    data_mode: str = "ascm"
    samples: int = 5000
    rho: float = 0.0
    horizon: int = 200
    explore_delta: int = 20
    # gridworld
    layout: str = "default"
    discovery_engine: str = "exact"
    phi_causal: float = 0.9
    mix_p: float = 0.1
    max_steps: int = 100
    max_actions: int = 20
    max_probes: int | None = 200_000
    eval_episodes: int = 100
    # output
    out: str = "out"

    def trajectories(self, default: int) -> tuple[int, int]:
        return (self.T if self.T is not None else default,
                self.T_prime if self.T_prime is not None else default)


_HINTS = typing.get_type_hints(ExperimentConfig)


def _convert(key: str, raw: str):
    hint = _HINTS[key]
    raw = raw.strip()
    args = typing.get_args(hint)
    if isinstance(hint, types.UnionType) or typing.get_origin(hint) is typing.Union:
        if raw.lower() in ("none", ""):
            return None
        hint = next(a for a in args if a is not type(None))
    if typing.get_origin(hint) is list:
        (inner,) = typing.get_args(hint)
        return [inner(v.strip()) for v in raw.split(",") if v.strip()]
    if hint is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if hint is int:
        return int(raw.replace("_", ""))
    return hint(raw)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _HINTS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _convert(key, raw))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return cfg


def load_config(path: str | Path | None, overrides: list[str] = ()) -> ExperimentConfig:
    cfg = parse_config(Path(path).read_text()) if path else ExperimentConfig()
    return parse_config("\n".join(overrides), cfg) if overrides else cfg
