"""Independent oracles used by the test suite.

These deliberately avoid the library's own gradient, probability, and
planning code paths: finite differences for gradients, an explicit
two-way logistic for pair probabilities, and value iteration over the
gridworld's public transition model for policy ceilings.
"""
from __future__ import annotations

import math

import numpy as np

from preflab.rewardnet import RewardNet


def logistic_pair_prob(sum_first: float, sum_second: float) -> tuple[float, float]:
    """Closed-form two-way softmax evaluated without the library helper."""
    gap = sum_first - sum_second
    if gap >= 0:
        p1 = 1.0 / (1.0 + math.exp(-gap))
    else:
        p1 = math.exp(gap) / (1.0 + math.exp(gap))
    return p1, 1.0 - p1


def finite_difference_grad(loss_fn, net: RewardNet, h: float = 1e-5):
    """Central-difference gradient of ``loss_fn(net)`` over every parameter.

    Returns (dws, dbs) lists shaped like the network.
    """
    def perturbed(arrays, idx, flat_i, delta):
        out = [a.copy() for a in arrays]
        flat = out[idx].ravel()
        flat[flat_i] += delta
        return out

    dws, dbs = [], []
    for li, w in enumerate(net.weights):
        g = np.zeros_like(w)
        flat = g.ravel()
        for i in range(w.size):
            up = RewardNet(perturbed(net.weights, li, i, h), net.biases)
            dn = RewardNet(perturbed(net.weights, li, i, -h), net.biases)
            flat[i] = (loss_fn(up) - loss_fn(dn)) / (2 * h)
        dws.append(g)
    for li, b in enumerate(net.biases):
        g = np.zeros_like(b)
        flat = g.ravel()
        for i in range(b.size):
            up = RewardNet(net.weights, perturbed(net.biases, li, i, h))
            dn = RewardNet(net.weights, perturbed(net.biases, li, i, -h))
            flat[i] = (loss_fn(up) - loss_fn(dn)) / (2 * h)
        dbs.append(g)
    return dws, dbs


def max_relative_grad_error(analytic, numeric_dws, numeric_dbs,
                            floor: float = 1e-6) -> float:
    """Worst relative disagreement between analytic and numeric gradients."""
    worst = 0.0
    for a, n in zip(analytic.dws + analytic.dbs, numeric_dws + numeric_dbs):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def value_iteration(env, gamma: float = 0.99, sweeps: int = 2000,
                    tol: float = 1e-10) -> np.ndarray:
    """Optimal state values for the gridworld via its public model.

    Episodes terminate on goal entry or at the step cap; the cap is
    ignored here (infinite-horizon discounted), which upper-bounds the
    capped optimum and matches it when the optimal path is short.
    """
    n, n_a = env.n_cells, env.n_actions
    goal = env.cell_index(env.config.goal)
    v = np.zeros(n)
    for _ in range(sweeps):
        q = np.empty((n, n_a))
        for s in range(n):
            cell = env.index_cell(s)
            for a in range(n_a):
                nxt = env.next_cell(cell, a)
                r = env.transition_reward(cell, a)
                ns = env.cell_index(nxt)
                q[s, a] = r + (0.0 if ns == goal else gamma * v[ns])
        v_new = q.max(axis=1)
        v_new[goal] = 0.0
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    return v


def greedy_policy_from_values(env, v: np.ndarray, gamma: float = 0.99) -> np.ndarray:
    goal = env.cell_index(env.config.goal)
    policy = np.zeros(env.n_cells, dtype=int)
    for s in range(env.n_cells):
        cell = env.index_cell(s)
        best, best_q = 0, -np.inf
        for a in range(env.n_actions):
            ns = env.cell_index(env.next_cell(cell, a))
            q = env.transition_reward(cell, a) + (0.0 if ns == goal else gamma * v[ns])
            if q > best_q:
                best, best_q = a, q
        policy[s] = best
    return policy


def rollout_return(env, policy_indices: np.ndarray) -> float:
    """Undiscounted true return of a fixed state->action table."""
    from preflab.envs import EnvAction

    state = env.reset()
    total = 0.0
    done = False
    while not done:
        a = int(policy_indices[env.state_index(state.features)])
        state, r, done = env.step(EnvAction(a))
        total += r
    return total
