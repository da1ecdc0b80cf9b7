"""Toy environments with known reward functions.

Three desk-scale tasks stand in for large control benchmarks:

* ``grid-hazard`` -- a deterministic gridworld with a goal cell and a set
  of hazard cells.  Entering a hazard costs so much that a single bad
  step dominates a whole segment's return, which is exactly the kind of
  "one fatal step" structure the annotator trap generator needs.
* ``line-world`` -- a 1-D continuous task; the agent nudges a point
  toward a target position.
* ``point-mass`` -- the 2-D analogue with a goal region.

All three are deterministic given (seed, action sequence), expose their
true reward as a pure function of (state features, action features), and
use bounded continuous actions in [-1, 1] per dimension where continuous.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError, StateError

ENV_NAMES = ("grid-hazard", "line-world", "point-mass")


@dataclass(frozen=True)
class EnvState:
    """Observation: a finite feature vector plus a terminal flag."""

    features: np.ndarray
    terminal: bool = False


@dataclass(frozen=True)
class EnvAction:
    """Either a discrete action index or a bounded real vector."""

    value: object  # int for discrete envs, np.ndarray for continuous


class GroundTruthReward:
    """Deterministic map (state features, action features) -> reward.

    Hidden from the reward learner; used only by annotators and metrics.
    """

    def __init__(self, fn):
        self._fn = fn

    def __call__(self, state_features: np.ndarray, action_features: np.ndarray) -> float:
        r = float(self._fn(np.asarray(state_features, dtype=float),
                           np.asarray(action_features, dtype=float)))
        if not np.isfinite(r):
            raise StateError("ground-truth reward must be finite")
        return r

    def segment_return(self, segment) -> float:
        """Sum of true rewards over a segment's (state, action) steps."""
        return float(sum(self(s, a) for s, a in zip(segment.states, segment.actions)))


@dataclass
class GridHazardConfig:
    width: int = 6
    height: int = 6
    start: tuple[int, int] = (0, 0)
    goal: tuple[int, int] = (5, 5)
    hazards: tuple[tuple[int, int], ...] = ((1, 3), (2, 1), (3, 3), (4, 1), (3, 5))
    goal_reward: float = 1.0
    hazard_reward: float = -10.0
    step_reward: float = -0.01
    max_steps: int = 60
    random_start: bool = False  # exploring starts (training-time coverage)


# Moves indexed 0..3: up, down, left, right (row, col deltas).
GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


class GridHazard:
    """Deterministic gridworld; states are one-hot cell encodings.

    Reward is attached to the transition: stepping onto the goal pays
    ``goal_reward`` and terminates; stepping onto a hazard pays
    ``hazard_reward`` (non-terminal); every other step pays
    ``step_reward``.  With the default magnitudes a single hazard entry
    outweighs the best possible hazard-free segment of any desk-scale
    length, so segment orderings flip on one-step perturbations.
    """

    name = "grid-hazard"
    discrete = True

    def __init__(self, seed: int = 0, config: GridHazardConfig | None = None):
        self.config = config or GridHazardConfig()
        c = self.config
        for cell in (c.start, c.goal, *c.hazards):
            if not (0 <= cell[0] < c.height and 0 <= cell[1] < c.width):
                raise ConfigurationError(f"cell {cell} outside {c.height}x{c.width} grid")
        if c.goal in c.hazards or c.start in c.hazards or c.start == c.goal:
            raise ConfigurationError("start, goal and hazards must be distinct cells")
        self.seed = seed
        self.n_cells = c.width * c.height
        self.state_dim = self.n_cells
        self.n_actions = len(GRID_MOVES)
        self.action_dim = self.n_actions
        self._hazard_set = set(c.hazards)
        self.gt = GroundTruthReward(self._reward_features)
        self._rng = np.random.default_rng(seed)
        self._start_pool = [self.index_cell(i) for i in range(self.n_cells)
                            if self.index_cell(i) not in self._hazard_set
                            and self.index_cell(i) != c.goal]
        self._cell: tuple[int, int] | None = None
        self._steps = 0
        self._done = True

    # -- encodings ---------------------------------------------------------

    def cell_index(self, cell: tuple[int, int]) -> int:
        return cell[0] * self.config.width + cell[1]

    def index_cell(self, idx: int) -> tuple[int, int]:
        return divmod(idx, self.config.width)

    def encode_state(self, cell: tuple[int, int]) -> np.ndarray:
        v = np.zeros(self.n_cells)
        v[self.cell_index(cell)] = 1.0
        return v

    def encode_action(self, action: int) -> np.ndarray:
        v = np.zeros(self.n_actions)
        v[action] = 1.0
        return v

    def state_index(self, state_features: np.ndarray) -> int:
        return int(np.argmax(state_features))

    # -- model (public: this is a known MDP) --------------------------------

    def next_cell(self, cell: tuple[int, int], action: int) -> tuple[int, int]:
        dr, dc = GRID_MOVES[action]
        r = min(max(cell[0] + dr, 0), self.config.height - 1)
        c = min(max(cell[1] + dc, 0), self.config.width - 1)
        return (r, c)

    def transition_reward(self, cell: tuple[int, int], action: int) -> float:
        nxt = self.next_cell(cell, action)
        if nxt == self.config.goal:
            return self.config.goal_reward
        if nxt in self._hazard_set:
            return self.config.hazard_reward
        return self.config.step_reward

    def is_hazard_entry(self, state_features: np.ndarray, action_features: np.ndarray) -> bool:
        cell = self.index_cell(self.state_index(state_features))
        return self.next_cell(cell, int(np.argmax(action_features))) in self._hazard_set

    def is_success(self, state: EnvState) -> bool:
        return self.index_cell(self.state_index(state.features)) == self.config.goal

    def _reward_features(self, state_features, action_features) -> float:
        cell = self.index_cell(self.state_index(state_features))
        return self.transition_reward(cell, int(np.argmax(action_features)))

    # -- episode API ---------------------------------------------------------

    def reset(self) -> EnvState:
        if self.config.random_start:
            self._cell = self._start_pool[int(self._rng.integers(len(self._start_pool)))]
        else:
            self._cell = self.config.start
        self._steps = 0
        self._done = False
        return EnvState(self.encode_state(self._cell))

    def step(self, action: EnvAction) -> tuple[EnvState, float, bool]:
        if self._done:
            raise StateError("step() after terminal state; call reset()")
        a = action.value
        if not isinstance(a, (int, np.integer)) or not 0 <= a < self.n_actions:
            raise InputError(f"discrete action must be in [0, {self.n_actions}), got {a!r}")
        reward = self.transition_reward(self._cell, int(a))
        self._cell = self.next_cell(self._cell, int(a))
        self._steps += 1
        done = self._cell == self.config.goal or self._steps >= self.config.max_steps
        self._done = done
        return EnvState(self.encode_state(self._cell), terminal=done), reward, done

    @property
    def policy_actions(self) -> list[int]:
        return list(range(self.n_actions))

    def render_metadata(self) -> dict:
        c = self.config
        return {
            "kind": "grid",
            "width": c.width,
            "height": c.height,
            "start": list(c.start),
            "goal": list(c.goal),
            "hazards": [list(h) for h in c.hazards],
        }

    def render_trace(self, state_features: np.ndarray) -> list[float]:
        return [float(v) for v in self.index_cell(self.state_index(state_features))]


class _ContinuousBase:
    """Shared mechanics for the bounded continuous tasks."""

    discrete = False
    step_scale = 0.1

    def __init__(self, seed: int, dim: int, max_steps: int):
        self.seed = seed
        self.state_dim = dim
        self.action_dim = dim
        self.max_steps = max_steps
        self._rng = np.random.default_rng(seed)
        self._pos: np.ndarray | None = None
        self._steps = 0
        self._done = True
        self.gt = GroundTruthReward(self._reward_features)

    def encode_action(self, action: np.ndarray) -> np.ndarray:
        return np.asarray(action, dtype=float)

    def _next_pos(self, pos: np.ndarray, action: np.ndarray) -> np.ndarray:
        return np.clip(pos + self.step_scale * action, -1.0, 1.0)

    def reset(self) -> EnvState:
        self._pos = self._rng.uniform(-1.0, 1.0, size=self.state_dim)
        self._steps = 0
        self._done = False
        return EnvState(self._pos.copy())

    def step(self, action: EnvAction) -> tuple[EnvState, float, bool]:
        if self._done:
            raise StateError("step() after terminal state; call reset()")
        a = np.asarray(action.value, dtype=float)
        if a.shape != (self.action_dim,) or np.any(np.abs(a) > 1.0) or not np.all(np.isfinite(a)):
            raise InputError(f"action must be a finite vector in [-1,1]^{self.action_dim}")
        reward = self.gt(self._pos, a)
        self._pos = self._next_pos(self._pos, a)
        self._steps += 1
        done = self._steps >= self.max_steps or self._is_goal(self._pos)
        self._done = done
        return EnvState(self._pos.copy(), terminal=done), reward, done

    def _is_goal(self, pos: np.ndarray) -> bool:
        return False

    def render_trace(self, state_features: np.ndarray) -> list[float]:
        v = [float(x) for x in state_features]
        return v if len(v) == 2 else [v[0], 0.0]


class LineWorld(_ContinuousBase):
    """1-D point on [-1, 1]; reward is closeness to a target position.

    Zero-magnitude actions leave the state unchanged (no drift).
    """

    name = "line-world"

    def __init__(self, seed: int = 0, target: float = 0.5, max_steps: int = 60):
        super().__init__(seed, dim=1, max_steps=max_steps)
        self.target = target

    def _reward_features(self, state_features, action_features) -> float:
        nxt = self._next_pos(state_features, action_features)
        return -abs(float(nxt[0]) - self.target)

    def is_success(self, state: EnvState) -> bool:
        return abs(float(state.features[0]) - self.target) < 0.05

    @property
    def policy_actions(self) -> list[np.ndarray]:
        return [np.array([v]) for v in (-1.0, 0.0, 1.0)]

    def render_metadata(self) -> dict:
        return {"kind": "trace", "dims": 1, "target": [self.target, 0.0]}


class PointMass(_ContinuousBase):
    """2-D point on [-1, 1]^2 steered toward a goal region."""

    name = "point-mass"

    def __init__(self, seed: int = 0, goal: tuple[float, float] = (0.6, 0.6),
                 goal_radius: float = 0.1, max_steps: int = 60):
        super().__init__(seed, dim=2, max_steps=max_steps)
        self.goal = np.asarray(goal, dtype=float)
        self.goal_radius = goal_radius

    def _reward_features(self, state_features, action_features) -> float:
        nxt = self._next_pos(state_features, action_features)
        return -float(np.linalg.norm(nxt - self.goal))

    def _is_goal(self, pos: np.ndarray) -> bool:
        return float(np.linalg.norm(pos - self.goal)) < self.goal_radius

    def is_success(self, state: EnvState) -> bool:
        return self._is_goal(state.features)

    @property
    def policy_actions(self) -> list[np.ndarray]:
        return [np.array([dx, dy]) for dx in (-1.0, 0.0, 1.0) for dy in (-1.0, 0.0, 1.0)]

    def render_metadata(self) -> dict:
        return {"kind": "trace", "dims": 2, "target": [float(v) for v in self.goal]}


def make_env(name: str, seed: int = 0, **params):
    """Construct an environment by name.

    Unknown names raise :class:`ConfigurationError`.  ``params`` are
    forwarded to the environment constructor (e.g. a ``GridHazardConfig``
    via ``config=`` for grid-hazard).
    """
    if name == "grid-hazard":
        return GridHazard(seed=seed, **params)
    if name == "line-world":
        return LineWorld(seed=seed, **params)
    if name == "point-mass":
        return PointMass(seed=seed, **params)
    raise ConfigurationError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")
