"""Policy learning on top of the learned reward, plus evaluation.

Tabular Q-learning covers the gridworld; the continuous tasks get a
linear Q function over a small fixed action set.  The update loop only
ever sees the ensemble's predicted reward -- true rewards pass through
to the replay buffer as opaque annotation payload and are never part of
a Q target.  Evaluation runs greedy rollouts scored by the environment's
own (true) rewards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import EnvAction
from .errors import ConfigurationError
from .experience import ReplayBuffer, Transition
from .rewardnet import RewardEnsemble


@dataclass
class AgentConfig:
    epsilon: float = 0.15
    q_lr: float = 0.3
    steps_per_session: int = 1000
    discount: float = 0.99
    warmup_steps: int = 2000

    def __post_init__(self):
        if not (0 <= self.epsilon <= 1):
            raise ConfigurationError("epsilon must be in [0, 1]")
        if not (0 < self.q_lr <= 1):
            raise ConfigurationError("q_lr must be in (0, 1]")
        if not (0 < self.discount <= 1):
            raise ConfigurationError("discount must be in (0, 1]")


class TabularQPolicy:
    """State-indexed action values for discrete-state environments."""

    def __init__(self, n_states: int, n_actions: int):
        self.q = np.zeros((n_states, n_actions))

    def state_key(self, env, state_features: np.ndarray) -> int:
        return env.state_index(state_features)

    def values(self, key: int) -> np.ndarray:
        return self.q[key]

    def update(self, key: int, action: int, target: float, lr: float) -> None:
        self.q[key, action] += lr * (target - self.q[key, action])


class LinearQPolicy:
    """Per-action linear value over state features (plus bias)."""

    def __init__(self, state_dim: int, n_actions: int):
        self.w = np.zeros((n_actions, state_dim + 1))

    def state_key(self, env, state_features: np.ndarray) -> np.ndarray:
        return np.concatenate([state_features, [1.0]])

    def values(self, key: np.ndarray) -> np.ndarray:
        return self.w @ key

    def update(self, key: np.ndarray, action: int, target: float, lr: float) -> None:
        err = target - float(self.w[action] @ key)
        self.w[action] += lr * err * key


def make_policy(env):
    if env.discrete:
        return TabularQPolicy(env.n_cells, env.n_actions)
    return LinearQPolicy(env.state_dim, len(env.policy_actions))


def _greedy_index(values: np.ndarray) -> int:
    return int(np.argmax(values))


def policy_update(policy, env, buffer: ReplayBuffer, learned_reward: RewardEnsemble,
                  steps: int, rng: np.random.Generator, cfg: AgentConfig,
                  explore: bool = True, reward_offset: float = 0.0):
    """Run env steps with epsilon-greedy exploration, label each transition
    with the ensemble's mean predicted reward, and apply Q updates.

    Returns the (mutated) policy.  The environment's reported reward is
    recorded on the transition for annotators and metrics but takes no
    part in the value update.

    ``reward_offset`` is subtracted from the predicted reward inside the
    value target only.  Pairwise preferences cannot identify a per-step
    constant (both comparison sums shift equally), but with early
    termination that free constant changes which policy is optimal: any
    state-action loop the model scores positive beats ever finishing the
    episode.  Shifting by, e.g., a high quantile of predicted rewards
    picks the representative of the preference-equivalent class under
    which lingering does not pay.
    """
    actions = env.policy_actions
    state = None
    for _ in range(steps):
        if state is None or state.terminal:
            state = env.reset()
            buffer.start_episode()
        key = policy.state_key(env, state.features)
        if explore and rng.random() < cfg.epsilon:
            a_idx = int(rng.integers(len(actions)))
        else:
            a_idx = _greedy_index(policy.values(key))
        raw = actions[a_idx]
        a_feats = env.encode_action(raw)
        next_state, env_reward, done = env.step(EnvAction(raw))
        r_hat = learned_reward.mean_reward(state.features, a_feats)
        next_key = policy.state_key(env, next_state.features)
        bootstrap = 0.0 if done else cfg.discount * float(np.max(policy.values(next_key)))
        policy.update(key, a_idx, (r_hat - reward_offset) + bootstrap, cfg.q_lr)
        buffer.push(Transition(state.features, a_feats, next_state.features,
                               learned_reward=r_hat, gt_reward=env_reward))
        state = next_state
    return policy


def random_warmup(env, buffer: ReplayBuffer, learned_reward: RewardEnsemble,
                  steps: int, rng: np.random.Generator) -> None:
    """Fill the buffer with uniformly random behavior before any learning."""
    actions = env.policy_actions
    state = None
    for _ in range(steps):
        if state is None or state.terminal:
            state = env.reset()
            buffer.start_episode()
        raw = actions[int(rng.integers(len(actions)))]
        a_feats = env.encode_action(raw)
        next_state, env_reward, done = env.step(EnvAction(raw))
        r_hat = learned_reward.mean_reward(state.features, a_feats)
        buffer.push(Transition(state.features, a_feats, next_state.features,
                               learned_reward=r_hat, gt_reward=env_reward))
        state = next_state


def guided_goal_episode(env, buffer: ReplayBuffer, wander_steps: int,
                        rng: np.random.Generator) -> None:
    """One gridworld episode that wanders hazard-free and then walks a
    shortest hazard-free path into the goal.

    Gives the buffer clean goal-reaching windows, which are the only
    hazard-free segments that strictly outrank others under the default
    rewards (and the raw material for trap-pair construction).
    """
    from collections import deque

    cfg = env.config
    hazards = set(cfg.hazards)

    def neighbors(cell):
        return [(a, env.next_cell(cell, a)) for a in range(env.n_actions)]

    # enter the goal through a neighbour that itself borders a hazard when
    # one exists: those approaches are the perturbable "one step from the
    # pit" windows the trap generator feeds on
    approach_cells = [c for _, c in neighbors(cfg.goal)
                      if c not in hazards and c != cfg.goal]
    risky = [c for c in approach_cells
             if any(n in hazards for _, n in neighbors(c))]
    approach = (risky or approach_cells)[0]

    def bfs_next(cell, target):
        # first move of a shortest hazard-free path to target
        if cell == target:
            return None
        seen = {cell}
        frontier = deque([(cell, None)])
        while frontier:
            cur, first = frontier.popleft()
            for a, nxt in neighbors(cur):
                if nxt in hazards or nxt == cfg.goal or nxt in seen:
                    continue
                step_first = a if first is None else first
                if nxt == target:
                    return step_first
                seen.add(nxt)
                frontier.append((nxt, step_first))
        return 0

    state = env.reset()
    buffer.start_episode()
    cell = cfg.start

    def take(a_idx):
        nonlocal state, cell
        a_feats = env.encode_action(a_idx)
        nxt, r, done = env.step(EnvAction(a_idx))
        r_hat = 0.0
        buffer.push(Transition(state.features, a_feats, nxt.features,
                               learned_reward=r_hat, gt_reward=r))
        state = nxt
        cell = env.next_cell(cell, a_idx)
        return done

    for _ in range(wander_steps):
        safe = [a for a, nxt in neighbors(cell)
                if nxt not in hazards and nxt != cfg.goal]
        if not safe:
            break
        if take(int(rng.choice(safe))):
            return
    while cell != approach:
        step = bfs_next(cell, approach)
        if step is None or take(step):
            return
    goal_moves = [a for a, nxt in neighbors(cell) if nxt == cfg.goal]
    if goal_moves:
        take(goal_moves[0])


@dataclass
class EvalMetrics:
    mean_return: float
    hazard_entry_rate: float
    success_rate: float


def evaluate(policy, env, episodes: int, rng: np.random.Generator) -> EvalMetrics:
    """Greedy rollouts scored by the environment's true rewards."""
    if episodes < 1:
        raise ConfigurationError("episodes must be >= 1")
    actions = env.policy_actions
    returns, hazards, successes = [], 0, 0
    check_hazard = hasattr(env, "is_hazard_entry")
    for _ in range(episodes):
        state = env.reset()
        total = 0.0
        hit_hazard = False
        done = False
        while not done:
            key = policy.state_key(env, state.features)
            a_idx = _greedy_index(policy.values(key))
            raw = actions[a_idx]
            if check_hazard and env.is_hazard_entry(state.features, env.encode_action(raw)):
                hit_hazard = True
            state, reward, done = env.step(EnvAction(raw))
            total += reward
        returns.append(total)
        hazards += int(hit_hazard)
        successes += int(env.is_success(state))
    return EvalMetrics(mean_return=float(np.mean(returns)),
                       hazard_entry_rate=hazards / episodes,
                       success_rate=successes / episodes)
