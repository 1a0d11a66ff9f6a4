"""Finite Dec-POMDP environments: the two-agent corridor grid world and tiny tabular MDPs.

Coordinates are ``(x, y)`` with the origin at the top-left corner, so ``UP``
decrements ``y``. All stochasticity is supplied by the caller as unit samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from fractions import Fraction
from typing import NamedTuple, Sequence

Cell = tuple[int, int]


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4

    @property
    def letter(self) -> str:
        return ACTION_LETTERS[self]


ACTION_LETTERS = "UDLRS"
MOVES: tuple[Cell, ...] = ((0, -1), (0, 1), (-1, 0), (1, 0), (0, 0))


class Coupling(str, Enum):
    INDEPENDENT = "TransitionIndependent"
    COUPLED = "Coupled"


class CorruptedStateError(ValueError):
    """Raised when an environment state lies outside the grid or inside a wall."""


def default_layout(n: int) -> tuple[tuple[Cell, Cell], tuple[Cell, Cell]]:
    """Corner starts on the left edge, targets mirrored on the right edge."""
    starts = ((0, 0), (0, n - 1))
    targets = ((n - 1, n - 1), (n - 1, 0))
    return starts, targets


@dataclass(frozen=True)
class GridConfig:
    grid_size: int = 6
    wall_enabled: bool = True
    bottleneck_gap: Cell | None = None
    collision_radius: float = 1.0
    coupling_mode: Coupling = Coupling.INDEPENDENT
    start_positions: tuple[Cell, Cell] | None = None
    target_positions: tuple[Cell, Cell] | None = None
    max_steps: int = 50
    step_reward: float = -1.0
    goal_reward: float = 10.0
    wall_column: int | None = None

    def __post_init__(self):
        n = self.grid_size
        if n < 2:
            raise ValueError(f"grid_size must be >= 2, got {n}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.collision_radius < 0:
            raise ValueError("collision_radius must be non-negative")
        starts, targets = default_layout(n)
        # frozen dataclass: fill derived defaults through object.__setattr__
        set_ = object.__setattr__
        set_(self, "coupling_mode", Coupling(self.coupling_mode))
        if self.wall_column is None:
            set_(self, "wall_column", n // 2)
        if self.bottleneck_gap is None:
            set_(self, "bottleneck_gap", (self.wall_column, n // 2))
        set_(self, "bottleneck_gap", tuple(self.bottleneck_gap))
        if self.start_positions is None:
            set_(self, "start_positions", starts)
        if self.target_positions is None:
            set_(self, "target_positions", targets)
        set_(self, "start_positions", tuple(tuple(c) for c in self.start_positions))
        set_(self, "target_positions", tuple(tuple(c) for c in self.target_positions))
        if self.wall_enabled and self.bottleneck_gap[0] != self.wall_column:
            raise ValueError("bottleneck_gap must lie on the wall column")
        for cell in (*self.start_positions, *self.target_positions):
            if not self.in_bounds(cell) or self.is_wall(cell):
                raise ValueError(f"start/target cell {cell} is out of bounds or on a wall")

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.grid_size and 0 <= cell[1] < self.grid_size

    def is_wall(self, cell: Cell) -> bool:
        return self.wall_enabled and cell[0] == self.wall_column and cell != self.bottleneck_gap

    @property
    def coupled(self) -> bool:
        return self.coupling_mode is Coupling.COUPLED

    def free_cells(self) -> list[Cell]:
        n = self.grid_size
        return [(x, y) for y in range(n) for x in range(n) if not self.is_wall((x, y))]


class EnvState(NamedTuple):
    positions: tuple[Cell, ...]
    step_count: int = 0
    done: bool = False


class StepOutcome(NamedTuple):
    next_state: object
    local_observations: tuple
    reward: float
    done: bool


def _clip(v: int, n: int) -> int:
    return 0 if v < 0 else (n - 1 if v > n - 1 else v)


def _clip_cell(x: int, y: int, n: int) -> Cell:
    return (_clip(x, n), _clip(y, n))


def _sign(v: int) -> int:
    return (v > 0) - (v < 0)


def grid_reset(cfg: GridConfig) -> EnvState:
    return EnvState(positions=tuple(cfg.start_positions), step_count=0, done=False)


def grid_step(state: EnvState, actions: Sequence[int], cfg: GridConfig) -> StepOutcome:
    """Advance the grid world by one joint action.

    Moves are clipped to the grid and reverted when they hit a wall cell other
    than the gap. In coupled mode, a post-move distance within the collision
    radius cancels both moves; if the agents are still within the radius they
    are pushed apart one cell along ``sign(p1 - p2)``.
    """
    if state.done:
        raise ValueError("grid_step called on a finished episode")
    n = cfg.grid_size
    walled = cfg.wall_enabled
    wx, gap = cfg.wall_column, cfg.bottleneck_gap
    new = []
    for p, a in zip(state.positions, actions):
        x, y = p
        if not (0 <= x < n and 0 <= y < n) or (walled and x == wx and p != gap):
            raise CorruptedStateError(f"position {p} is not a free grid cell")
        dx, dy = MOVES[a]
        x, y = x + dx, y + dy
        target = (0 if x < 0 else (n - 1 if x >= n else x), 0 if y < 0 else (n - 1 if y >= n else y))
        new.append(p if walled and target[0] == wx and target != gap else target)

    if cfg.coupled:
        r = cfg.collision_radius
        if math.dist(new[0], new[1]) <= r:
            new = list(state.positions)
            if math.dist(new[0], new[1]) <= r:
                vx, vy = new[0][0] - new[1][0], new[0][1] - new[1][1]
                d = (1, 1) if vx == 0 and vy == 0 else (_sign(vx), _sign(vy))
                for i, s in ((0, 1), (1, -1)):
                    push = _clip_cell(new[i][0] + s * d[0], new[i][1] + s * d[1], n)
                    if not cfg.is_wall(push):
                        new[i] = push

    positions = tuple(new)
    steps = state.step_count + 1
    reward, done = cfg.step_reward, False
    if all(p == t for p, t in zip(positions, cfg.target_positions)):
        reward, done = cfg.goal_reward, True
    elif steps >= cfg.max_steps:
        done = True
    return StepOutcome(EnvState(positions, steps, done), positions, reward, done)


class GridEnv:
    """Stateful two-agent grid world driven by :class:`~delaylab.delay.DelayWrapper`."""

    n_agents = 2
    action_letters = ACTION_LETTERS
    default_action = int(Action.STAY)

    def __init__(self, cfg: GridConfig | None = None):
        self.cfg = cfg or GridConfig()
        self.state: EnvState | None = None

    @property
    def n_actions(self) -> int:
        return len(ACTION_LETTERS)

    def reset(self, env_sample=None) -> tuple:
        self.state = grid_reset(self.cfg)
        return self.state.positions

    def step(self, actions: Sequence[int], env_sample=None) -> StepOutcome:
        out = grid_step(self.state, actions, self.cfg)
        self.state = out.next_state
        return out

    def snapshot(self):
        return self.state.positions


# ---------------------------------------------------------------------------
# tiny tabular MDPs for exact enumeration


@dataclass(frozen=True)
class TinyMdpSpec:
    """Small joint-state MDP with deterministic per-agent observations.

    ``transitions[s][joint]`` is a probability row over next states, where
    ``joint`` is the flat index of the joint action (agent 0 most significant).
    ``observations[s]`` is the tuple of per-agent observations of state ``s``.
    """

    state_count: int
    action_counts: tuple[int, ...]
    transitions: tuple
    observations: tuple
    rewards: tuple
    initial: tuple
    horizon: int = 3

    def __post_init__(self):
        if self.state_count > 4 or self.horizon > 5:
            raise ValueError("tiny MDPs are limited to 4 states and horizon 5")
        n_joint = math.prod(self.action_counts)
        if len(self.transitions) != self.state_count or len(self.rewards) != self.state_count:
            raise ValueError("transition/reward tables must have one entry per state")
        if len(self.observations) != self.state_count:
            raise ValueError("observation map must have one entry per state")
        rows = [self.initial]
        for s in range(self.state_count):
            if len(self.transitions[s]) != n_joint or len(self.rewards[s]) != n_joint:
                raise ValueError(f"state {s} needs {n_joint} joint-action entries")
            rows.extend(self.transitions[s])
        for row in rows:
            check_distribution(row, self.state_count)

    @property
    def n_agents(self) -> int:
        return len(self.action_counts)

    def joint_index(self, actions: Sequence[int]) -> int:
        idx = 0
        for a, n in zip(actions, self.action_counts):
            if not 0 <= a < n:
                raise ValueError(f"action {a} out of range for {n} actions")
            idx = idx * n + a
        return idx

    @classmethod
    def from_dict(cls, d: dict) -> "TinyMdpSpec":
        def num(x):
            return Fraction(x) if isinstance(x, (str, int)) else x

        def rows(table):
            return tuple(tuple(tuple(num(p) for p in row) for row in per_s) for per_s in table)

        obs = tuple(tuple(o) if isinstance(o, (list, tuple)) else (o,) for o in d["observations"])
        return cls(
            state_count=int(d["state_count"]),
            action_counts=tuple(int(a) for a in d["action_counts"]),
            transitions=rows(d["transitions"]),
            observations=obs,
            rewards=tuple(tuple(num(r) for r in per_s) for per_s in d["rewards"]),
            initial=tuple(num(p) for p in d["initial"]),
            horizon=int(d.get("horizon", 3)),
        )


class MalformedDistributionError(ValueError):
    pass


def check_distribution(row: Sequence, size: int | None = None) -> None:
    if size is not None and len(row) != size:
        raise MalformedDistributionError(f"row has {len(row)} entries, expected {size}")
    if any(p < 0 for p in row):
        raise MalformedDistributionError(f"negative probability in {row}")
    total = sum(row)
    if all(isinstance(p, (int, Fraction)) for p in row):
        if total != 1:
            raise MalformedDistributionError(f"row sums to {total}, not 1")
    elif abs(total - 1) > 1e-12:
        raise MalformedDistributionError(f"row sums to {float(total)!r}, not 1")


def inverse_cdf(row: Sequence, u: float) -> int:
    """Index picked by ``u`` in [0, 1) walking the cumulative row in index order."""
    if not 0 <= u < 1:
        raise ValueError(f"unit sample must lie in [0, 1), got {u}")
    acc = 0
    last = 0
    for i, p in enumerate(row):
        if p > 0:
            last = i
        acc += p
        if u < acc:
            return i
    # float rows summing to 1 - eps
    return last


def tiny_mdp_step(spec: TinyMdpSpec, state: int, actions: Sequence[int], unit_sample: float) -> StepOutcome:
    j = spec.joint_index(actions)
    row = spec.transitions[state][j]
    check_distribution(row, spec.state_count)
    nxt = inverse_cdf(row, unit_sample)
    return StepOutcome(nxt, spec.observations[nxt], spec.rewards[state][j], False)


class TinyMdpEnv:
    """Stateful tiny MDP; episodes end after ``spec.horizon`` steps."""

    action_letters = "0123456789"
    default_action = 0

    def __init__(self, spec: TinyMdpSpec):
        self.spec = spec
        self.state: int | None = None
        self.t = 0

    @property
    def n_agents(self) -> int:
        return self.spec.n_agents

    @property
    def n_actions(self) -> int:
        return max(self.spec.action_counts)

    def reset(self, env_sample: float = 0.0) -> tuple:
        self.state = inverse_cdf(self.spec.initial, env_sample)
        self.t = 0
        return self.spec.observations[self.state]

    def step(self, actions: Sequence[int], env_sample: float = 0.0) -> StepOutcome:
        if self.t >= self.spec.horizon:
            raise ValueError("tiny MDP episode already finished")
        out = tiny_mdp_step(self.spec, self.state, actions, env_sample)
        self.state = out.next_state
        self.t += 1
        return out._replace(done=self.t >= self.spec.horizon)

    def snapshot(self):
        return self.state


def make_env(cfg):
    if isinstance(cfg, GridConfig):
        return GridEnv(cfg)
    if isinstance(cfg, TinyMdpSpec):
        return TinyMdpEnv(cfg)
    raise TypeError(f"no environment for {type(cfg).__name__}")


__all__ = [
    "Action", "ACTION_LETTERS", "MOVES", "Coupling", "CorruptedStateError", "GridConfig",
    "EnvState", "StepOutcome", "grid_reset", "grid_step", "GridEnv", "TinyMdpSpec",
    "TinyMdpEnv", "tiny_mdp_step", "inverse_cdf", "check_distribution",
    "MalformedDistributionError", "make_env", "default_layout",
]
