"""Toy goal-reaching MDPs: open/walled grids, a key-door grid, and a
mountain-hill control task.

Dynamics are pure functions of (spec, state, action); the :class:`Env`
wrapper adds episode bookkeeping (random starts, -1 reward per step, goal /
budget termination) with an explicit RNG, so instances are cheap and safe to
run in parallel.

States are float64 feature vectors: grids emit (x, y) normalized to [0, 1],
the key-door grid appends a has_key flag, mountain_hill emits raw
(position, velocity).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UnsupportedEnvError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

GRID_ENVS = ("open_grid", "walls_grid", "keydoor_grid")
ENV_IDS = GRID_ENVS + ("mountain_hill",)

# grid actions
UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3

# mountain_hill: the usual two-parameter hill dynamics
HILL_FORCE = 0.001
HILL_GRAVITY = 0.0025
HILL_MIN_POS, HILL_MAX_POS = -1.2, 0.6
HILL_MAX_SPEED = 0.07
HILL_GOAL_POS = 0.5


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    width: int = 0
    height: int = 0
    walls: frozenset = field(default_factory=frozenset)
    max_episode_steps: int = 50
    seed: int = 0

    def __post_init__(self):
        validate_spec(self)


def validate_spec(spec: EnvSpec) -> None:
    if spec.env_id not in ENV_IDS:
        raise ConfigError(f"unknown env id {spec.env_id!r}")
    if spec.max_episode_steps < 1:
        raise ConfigError("max_episode_steps must be >= 1")
    if spec.env_id in GRID_ENVS:
        if spec.width < 2 or spec.height < 2:
            raise ConfigError("grid dimensions must be >= 2")
        for x, y in spec.walls:
            if not (0 <= x < spec.width and 0 <= y < spec.height):
                raise ConfigError(f"wall {(x, y)} outside the grid")
        if len(free_cells(spec)) == 0:
            raise ConfigError("walls cover every cell")
        if spec.env_id == "keydoor_grid":
            start, key, door, _ = keydoor_layout(spec)
            if start in (key, door):
                raise ConfigError("degenerate keydoor layout")
    elif spec.walls:
        raise ConfigError("walls are only meaningful for grid envs")


def num_actions(spec: EnvSpec) -> int:
    return 3 if spec.env_id == "mountain_hill" else 4


def state_dim(spec: EnvSpec) -> int:
    if spec.env_id == "keydoor_grid":
        return 3
    return 2


def keydoor_layout(spec: EnvSpec):
    """(start, key, door, walls) for the key-door grid.

    A wall column at width // 2 splits the grid; the door is its middle
    cell, the key sits in the far corner of the start half.
    """
    door_col = spec.width // 2
    door = (door_col, spec.height // 2)
    walls = frozenset((door_col, y) for y in range(spec.height) if y != door[1])
    start = (0, 0)
    key = (0, spec.height - 1)
    return start, key, door, walls


def grid_walls(spec: EnvSpec) -> frozenset:
    if spec.env_id == "keydoor_grid":
        return keydoor_layout(spec)[3]
    return spec.walls


def free_cells(spec: EnvSpec):
    """Non-wall cells in deterministic (x, y) order."""
    walls = grid_walls(spec) if spec.env_id == "keydoor_grid" else spec.walls
    return [
        (x, y)
        for x in range(spec.width)
        for y in range(spec.height)
        if (x, y) not in walls
    ]


# ---------------------------------------------------------------------------
# state <-> features
# ---------------------------------------------------------------------------


def grid_state(spec: EnvSpec, x: int, y: int, has_key: int = 0) -> np.ndarray:
    fx = x / (spec.width - 1)
    fy = y / (spec.height - 1)
    if spec.env_id == "keydoor_grid":
        return np.array([fx, fy, float(has_key)])
    return np.array([fx, fy])


def cell_of(spec: EnvSpec, state: np.ndarray):
    x = int(round(float(state[0]) * (spec.width - 1)))
    y = int(round(float(state[1]) * (spec.height - 1)))
    return x, y


def state_key(spec: EnvSpec, state: np.ndarray):
    """Hashable exact key for enumerable envs."""
    if spec.env_id not in GRID_ENVS:
        raise UnsupportedEnvError("state_key requires an enumerable grid env")
    x, y = cell_of(spec, state)
    if spec.env_id == "keydoor_grid":
        return x, y, int(round(float(state[2])))
    return x, y


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

_MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}


def transition(spec: EnvSpec, state: np.ndarray, action: int) -> np.ndarray:
    """One deterministic step; total on valid inputs."""
    if not 0 <= action < num_actions(spec):
        raise ConfigError(f"action {action} out of range")
    if spec.env_id == "mountain_hill":
        return _hill_step(state, action)
    x, y = cell_of(spec, state)
    dx, dy = _MOVES[action]
    nx, ny = x + dx, y + dy
    if not (0 <= nx < spec.width and 0 <= ny < spec.height):
        nx, ny = x, y
    if spec.env_id == "keydoor_grid":
        start, key, door, walls = keydoor_layout(spec)
        has_key = int(round(float(state[2])))
        if (nx, ny) in walls or ((nx, ny) == door and not has_key):
            nx, ny = x, y
        if (nx, ny) == key:
            has_key = 1
        return grid_state(spec, nx, ny, has_key)
    if (nx, ny) in spec.walls:
        nx, ny = x, y
    return grid_state(spec, nx, ny)


def _hill_step(state: np.ndarray, action: int) -> np.ndarray:
    pos, vel = float(state[0]), float(state[1])
    vel += (action - 1) * HILL_FORCE - HILL_GRAVITY * np.cos(3 * pos)
    vel = min(max(vel, -HILL_MAX_SPEED), HILL_MAX_SPEED)
    pos += vel
    pos = min(max(pos, HILL_MIN_POS), HILL_MAX_POS)
    if pos <= HILL_MIN_POS and vel < 0:
        vel = 0.0
    return np.array([pos, vel])


def states_equal(spec: EnvSpec, a: np.ndarray, b: np.ndarray) -> bool:
    if spec.env_id in GRID_ENVS:
        return state_key(spec, a) == state_key(spec, b)
    return bool(np.array_equal(a, b))


def is_terminal(spec: EnvSpec, state: np.ndarray, goal=None) -> bool:
    if spec.env_id == "mountain_hill":
        return float(state[0]) >= HILL_GOAL_POS
    return goal is not None and states_equal(spec, state, goal)


class Env:
    """Episode wrapper: -1 reward per step, done at goal or step budget."""

    def __init__(self, spec: EnvSpec, goal: np.ndarray | None = None):
        self.spec = spec
        self.goal = None if goal is None else np.asarray(goal, dtype=np.float64)
        self.state = None
        self.steps = 0

    def reset(self, seed) -> np.ndarray:
        """Start an episode; ``seed`` is an int or a numpy Generator."""
        rng = np.random.default_rng(seed)
        spec = self.spec
        if spec.env_id == "keydoor_grid":
            start = keydoor_layout(spec)[0]
            self.state = grid_state(spec, *start, has_key=0)
        elif spec.env_id == "mountain_hill":
            self.state = np.array([rng.uniform(-0.6, -0.4), 0.0])
        else:
            cells = free_cells(spec)
            x, y = cells[int(rng.integers(len(cells)))]
            self.state = grid_state(spec, x, y)
        self.steps = 0
        return self.state

    def at_goal(self, state=None) -> bool:
        s = self.state if state is None else state
        return is_terminal(self.spec, s, self.goal)

    def step(self, action: int):
        """Returns (state, reward, done); reward is -1 per step until done."""
        self.state = transition(self.spec, self.state, action)
        self.steps += 1
        done = self.at_goal() or self.steps >= self.spec.max_episode_steps
        return self.state, -1.0, done


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------


def enumerate_states(spec: EnvSpec) -> np.ndarray:
    """Every reachable state exactly once, deterministic order, (n, d) array.

    Plain grids list all non-wall cells (any of them can be a start state);
    the key-door grid explores the (cell, has_key) product graph from its
    fixed start.
    """
    if spec.env_id not in GRID_ENVS:
        raise UnsupportedEnvError(f"{spec.env_id} has a continuous state space")
    if spec.env_id != "keydoor_grid":
        return np.array([grid_state(spec, x, y) for x, y in free_cells(spec)])
    start = keydoor_layout(spec)[0]
    first = grid_state(spec, *start, has_key=0)
    seen = {state_key(spec, first): first}
    frontier = [first]
    while frontier:
        nxt = []
        for s in frontier:
            for a in range(num_actions(spec)):
                t = transition(spec, s, a)
                k = state_key(spec, t)
                if k not in seen:
                    seen[k] = t
                    nxt.append(t)
        frontier = nxt
    return np.array([seen[k] for k in sorted(seen)])


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def env_spec_from_dict(cfg: dict) -> EnvSpec:
    try:
        env_id = cfg["env"]
    except KeyError:
        raise ConfigError("config is missing the 'env' key") from None
    walls = frozenset((int(x), int(y)) for x, y in cfg.get("walls", []))
    return EnvSpec(
        env_id=env_id,
        width=int(cfg.get("width", 0)),
        height=int(cfg.get("height", 0)),
        walls=walls,
        max_episode_steps=int(cfg.get("max_steps", 50)),
        seed=int(cfg.get("seed", 0)),
    )


def spec_to_dict(spec: EnvSpec) -> dict:
    """Plain-dict form accepted back by env_spec_from_dict."""
    return {
        "env": spec.env_id,
        "width": spec.width,
        "height": spec.height,
        "walls": sorted([x, y] for x, y in spec.walls),
        "max_steps": spec.max_episode_steps,
        "seed": spec.seed,
    }


def load_env_spec(path) -> EnvSpec:
    """Load an EnvSpec from a TOML file (keys: env, width, height, walls,
    max_steps, seed)."""
    with open(path, "rb") as fh:
        try:
            cfg = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return env_spec_from_dict(cfg)
