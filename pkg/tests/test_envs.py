import numpy as np
import pytest

from preflab.envs import EnvAction, GridHazardConfig, make_env
from preflab.errors import ConfigurationError, InputError, StateError

from conftest import fill_buffer_random


def run_actions(env, actions):
    state = env.reset()
    trajectory = [state.features.copy()]
    rewards = []
    for a in actions:
        state, r, done = env.step(EnvAction(a))
        trajectory.append(state.features.copy())
        rewards.append(r)
        if done:
            break
    return trajectory, rewards


class TestMakeEnv:
    def test_unknown_name_is_config_error(self):
        with pytest.raises(ConfigurationError):
            make_env("mountain-car", 0)

    def test_grid_reset_starts_at_declared_cell(self):
        env = make_env("grid-hazard", 0)
        state = env.reset()
        assert env.index_cell(env.state_index(state.features)) == env.config.start

    def test_grid_hazard_entry_reward_matches_config(self):
        env = make_env("grid-hazard", 0)
        hazard = env.config.hazards[0]
        # stand above the hazard and step down into it
        above = (hazard[0] - 1, hazard[1])
        assert above not in env.config.hazards
        r = env.transition_reward(above, 1)  # action 1 = down
        assert r == env.config.hazard_reward == -10.0

    def test_hazard_reward_overridable(self):
        cfg = GridHazardConfig(hazard_reward=-3.0)
        env = make_env("grid-hazard", 0, config=cfg)
        hazard = cfg.hazards[0]
        above = (hazard[0] - 1, hazard[1])
        assert env.transition_reward(above, 1) == -3.0

    def test_line_world_zero_action_is_identity(self):
        env = make_env("line-world", 3)
        state = env.reset()
        nxt, _, _ = env.step(EnvAction(np.array([0.0])))
        np.testing.assert_array_equal(state.features, nxt.features)


class TestStep:
    def test_rewards_finite(self):
        for name in ("grid-hazard", "line-world", "point-mass"):
            env = make_env(name, 1)
            env.reset()
            a = env.policy_actions[0]
            _, r, _ = env.step(EnvAction(a))
            assert np.isfinite(r)

    @pytest.mark.parametrize("name", ["grid-hazard", "line-world", "point-mass"])
    def test_same_seed_same_actions_identical_trajectory(self, name):
        env_a = make_env(name, 7)
        env_b = make_env(name, 7)
        rng = np.random.default_rng(0)
        picks = [int(rng.integers(len(env_a.policy_actions))) for _ in range(40)]
        traj_a, rew_a = run_actions(env_a, [env_a.policy_actions[i] for i in picks])
        traj_b, rew_b = run_actions(env_b, [env_b.policy_actions[i] for i in picks])
        assert rew_a == rew_b
        for sa, sb in zip(traj_a, traj_b):
            np.testing.assert_array_equal(sa, sb)

    def test_goal_entry_terminates(self):
        env = make_env("grid-hazard", 0, config=GridHazardConfig(
            width=3, height=3, start=(0, 0), goal=(0, 2), hazards=((2, 2),)))
        env.reset()
        _, r1, d1 = env.step(EnvAction(3))
        assert not d1
        state, r2, d2 = env.step(EnvAction(3))
        assert d2 and r2 == env.config.goal_reward
        assert env.is_success(state)

    def test_step_after_terminal_is_state_error(self):
        env = make_env("line-world", 0, max_steps=1)
        env.reset()
        env.step(EnvAction(np.array([0.5])))
        with pytest.raises(StateError):
            env.step(EnvAction(np.array([0.5])))

    def test_out_of_bounds_action_is_input_error(self):
        grid = make_env("grid-hazard", 0)
        grid.reset()
        with pytest.raises(InputError):
            grid.step(EnvAction(9))
        line = make_env("line-world", 0)
        line.reset()
        with pytest.raises(InputError):
            line.step(EnvAction(np.array([1.5])))


class TestGroundTruth:
    def test_reward_is_pure_replay_matches_log(self, rng):
        env = make_env("grid-hazard", 5)
        buffer = fill_buffer_random(env, 300, seed=5)
        for t in buffer.transitions():
            assert env.gt(t.state, t.action) == t.gt_reward

    def test_continuous_reward_pure(self):
        env = make_env("point-mass", 2)
        state = env.reset()
        a = np.array([0.3, -0.7])
        _, r, _ = env.step(EnvAction(a))
        assert env.gt(state.features, a) == r

    def test_hazard_dominance_over_segments(self, rng):
        # any segment containing a hazard step returns strictly less than
        # any same-length hazard-free segment at default magnitudes
        env = make_env("grid-hazard", 9)
        buffer = fill_buffer_random(env, 4000, seed=9)
        h = 20
        hazard_returns, clean_returns = [], []
        for _ in range(500):
            seg, _ = buffer.sample_segment_pair(h, rng)
            ret = env.gt.segment_return(seg)
            touched = any(env.is_hazard_entry(s, a)
                          for s, a in zip(seg.states, seg.actions))
            (hazard_returns if touched else clean_returns).append(ret)
        assert hazard_returns and clean_returns
        assert max(hazard_returns) < min(clean_returns)
