import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preflab.errors import ConfigurationError, FormatError, InputError
from preflab.experience import PreferenceLabel, QueryTriple
from preflab.rewardnet import (AdamState, RewardEnsemble, RewardNet, adam_step,
                               ensemble_prob, forward_cached, grad_loss, init_adam,
                               init_ensemble, init_reward_net, load_ensemble,
                               pack_features, packed_backward, packed_sums,
                               preference_prob, prob_from_sums, reward_forward,
                               save_ensemble, zero_grads)
from preflab.semisup import _plain_batch

from conftest import random_segment
from oracles import finite_difference_grad, logistic_pair_prob, max_relative_grad_error


def small_net(rng, input_dim=5, hidden=(6,)):
    return init_reward_net(input_dim, hidden, rng)


class TestForward:
    def test_zero_parameters_give_zero_output(self):
        net = RewardNet([np.zeros((5, 4)), np.zeros((4, 1))],
                        [np.zeros(4), np.zeros(1)])
        assert reward_forward(net, np.ones(3), np.ones(2)) == 0.0

    def test_outputs_bounded_over_random_inputs(self, rng):
        net = small_net(rng)
        x = rng.normal(scale=10.0, size=(10_000, 5))
        r, _ = forward_cached(net, x)
        assert np.all(r >= -1.0) and np.all(r <= 1.0)

    def test_deterministic(self, rng):
        net = small_net(rng)
        s, a = rng.normal(size=3), rng.normal(size=2)
        assert reward_forward(net, s, a) == reward_forward(net, s, a)

    def test_dimension_mismatch_is_input_error(self, rng):
        net = small_net(rng)
        with pytest.raises(InputError):
            reward_forward(net, np.ones(4), np.ones(4))


class TestPreferenceProb:
    def test_closed_form_logistic(self):
        p1, p2 = prob_from_sums(1.0, 0.0)
        # independent closed-form oracle at 1e-9; printed constant at its
        # own 7-digit precision
        assert p1 == pytest.approx(logistic_pair_prob(1.0, 0.0)[0], abs=1e-9)
        assert p1 == pytest.approx(0.7310586, abs=5e-8)

    def test_identical_segments_exact_half(self, rng):
        net = small_net(rng)
        seg = random_segment(rng, h=4, ds=3, da=2)
        p1, p2 = preference_prob(net, seg, seg)
        assert p1 == 0.5 and p2 == 0.5

    def test_extreme_sums_saturate_without_overflow(self):
        p1, p2 = prob_from_sums(50.0, -50.0)
        assert np.isfinite(p1) and np.isfinite(p2)
        assert p1 >= 1.0 - 1e-9 and p2 <= 1e-9

    def test_normalization_and_swap_antisymmetry(self, rng):
        net = small_net(rng)
        for _ in range(200):
            a = random_segment(rng, h=6, ds=3, da=2)
            b = random_segment(rng, h=6, ds=3, da=2)
            p = preference_prob(net, a, b)
            q = preference_prob(net, b, a)
            assert abs(p[0] + p[1] - 1.0) <= 1e-12
            assert abs(p[0] - q[1]) <= 1e-12 and abs(p[1] - q[0]) <= 1e-12

    def test_length_mismatch_rejected(self, rng):
        net = small_net(rng)
        a = random_segment(rng, h=4)
        b = random_segment(rng, h=5)
        with pytest.raises(InputError):
            preference_prob(net, a, b)

    def test_constant_reward_shift_leaves_probability_fixed(self, rng):
        # a +c shift on every per-step output adds H*c to both sums
        net = small_net(rng)
        a = random_segment(rng, h=7, ds=3, da=2)
        b = random_segment(rng, h=7, ds=3, da=2)
        r1, _ = forward_cached(net, a.features())
        r2, _ = forward_cached(net, b.features())
        base = prob_from_sums(float(r1.sum()), float(r2.sum()))
        for c in (-3.0, 0.5, 10.0):
            shifted = prob_from_sums(float((r1 + c).sum()), float((r2 + c).sum()))
            assert shifted[0] == pytest.approx(base[0], abs=1e-9)


class TestPackedSums:
    def test_matches_per_segment_forward(self, rng):
        net = small_net(rng)
        segs = [random_segment(rng, h=h) for h in (3, 5, 2, 7)]
        packed = pack_features([s.features() for s in segs])
        sums, _ = packed_sums(net, packed)
        for s, total in zip(segs, sums):
            r, _ = forward_cached(net, s.features())
            assert total == pytest.approx(float(r.sum()), abs=1e-12)

    def test_packed_backward_matches_finite_differences(self, rng):
        net = small_net(rng)
        segs = [random_segment(rng, h=h) for h in (3, 4)]
        packed = pack_features([s.features() for s in segs])
        weights = np.array([0.7, -1.3])

        def loss(n):
            sums, _ = packed_sums(n, packed)
            return float(weights @ sums)

        sums, cache = packed_sums(net, packed)
        analytic = packed_backward(net, packed, cache, weights)
        dws, dbs = finite_difference_grad(loss, net)
        assert max_relative_grad_error(analytic, dws, dbs) < 1e-6


class TestGradLoss:
    def test_grad_loss_matches_finite_differences(self, rng):
        net = small_net(rng)
        triples = [QueryTriple(random_segment(rng, h=4), random_segment(rng, h=4),
                               PreferenceLabel.hard_first(), "oracle"),
                   QueryTriple(random_segment(rng, h=4), random_segment(rng, h=4),
                               PreferenceLabel.soft(0.3), "oracle")]
        prepared = _plain_batch(triples)
        analytic = grad_loss(net, prepared)
        dws, dbs = finite_difference_grad(prepared.loss_value, net)
        assert max_relative_grad_error(analytic, dws, dbs) < 1e-4

    def test_duplicated_batch_same_gradient(self, rng):
        net = small_net(rng)
        triples = [QueryTriple(random_segment(rng, h=3), random_segment(rng, h=3),
                               PreferenceLabel.soft(0.7), "oracle")]
        g1 = grad_loss(net, _plain_batch(triples))
        g2 = grad_loss(net, _plain_batch(triples * 2))
        for a, b in zip(g1.dws + g1.dbs, g2.dws + g2.dbs):
            np.testing.assert_allclose(a, b, atol=1e-14)

    def test_equal_label_identical_segments_zero_gradient(self, rng):
        net = small_net(rng)
        seg = random_segment(rng, h=4)
        triples = [QueryTriple(seg, seg, PreferenceLabel.equal(), "oracle")]
        g = grad_loss(net, _plain_batch(triples))
        assert g.max_abs() == 0.0

    def test_empty_batch_rejected(self, rng):
        with pytest.raises(InputError):
            _plain_batch([])


class TestAdam:
    def test_zero_gradient_leaves_params(self, rng):
        net = small_net(rng)
        state = init_adam(net, lr=0.01)
        new_net, new_state = adam_step(net, zero_grads(net), state)
        for w0, w1 in zip(net.weights, new_net.weights):
            np.testing.assert_array_equal(w0, w1)
        assert new_state.step == 1

    def test_first_step_magnitude_is_learning_rate(self):
        # hand-computed: m_hat = g, v_hat = g^2, step = lr*g/(|g|+eps) ~ lr
        net = RewardNet([np.array([[0.5]])], [np.array([0.0])])
        state = init_adam(net, lr=0.001)
        from preflab.rewardnet import Grads
        grads = Grads([np.array([[1.0]])], [np.array([0.0])])
        new_net, _ = adam_step(net, grads, state)
        delta = 0.5 - float(new_net.weights[0][0, 0])
        assert delta == pytest.approx(0.001, rel=1e-6)

    def test_two_runs_identical(self, rng):
        rng2 = np.random.default_rng(42)
        net1, net2 = small_net(rng), small_net(rng2)
        s1, s2 = init_adam(net1, 0.01), init_adam(net2, 0.01)
        g = zero_grads(net1)
        g.dws[0][:] = 0.3
        for _ in range(5):
            net1, s1 = adam_step(net1, g, s1)
            net2, s2 = adam_step(net2, g, s2)
        for a, b in zip(net1.weights, net2.weights):
            np.testing.assert_array_equal(a, b)

    def test_shape_mismatch_rejected(self, rng):
        net = small_net(rng)
        bad = zero_grads(small_net(rng, input_dim=7))
        with pytest.raises(InputError):
            adam_step(net, bad, init_adam(net))


class TestEnsemble:
    def test_default_size_three(self, rng):
        ens = init_ensemble(5, (6,), 3, 0.01, rng)
        assert ens.size == 3

    def test_identical_members_zero_variance(self, rng):
        net = small_net(rng)
        ens = RewardEnsemble([net.copy() for _ in range(3)],
                             [init_adam(net) for _ in range(3)])
        a, b = random_segment(rng, h=4), random_segment(rng, h=4)
        per, mean = ensemble_prob(ens, a, b)
        assert np.std([p[0] for p in per]) == 0.0
        assert mean[0] == per[0][0]

    def test_mean_within_member_range(self, rng):
        ens = init_ensemble(5, (6,), 4, 0.01, rng)
        a, b = random_segment(rng, h=4), random_segment(rng, h=4)
        per, mean = ensemble_prob(ens, a, b)
        firsts = [p[0] for p in per]
        assert min(firsts) <= mean[0] <= max(firsts)

    def test_empty_ensemble_rejected(self):
        with pytest.raises(ConfigurationError):
            RewardEnsemble([], [])


class TestCheckpoints:
    def test_round_trip_exact(self, rng, tmp_path):
        ens = init_ensemble(5, (6, 4), 3, 0.0123, rng)
        # give adam state nontrivial content
        g = zero_grads(ens.members[0])
        g.dws[0][:] = rng.normal(size=g.dws[0].shape)
        ens.members[0], ens.adam[0] = adam_step(ens.members[0], g, ens.adam[0])
        ens.updates = 7
        path = tmp_path / "ens.ckpt"
        save_ensemble(ens, path)
        loaded = load_ensemble(path)
        assert loaded.size == ens.size and loaded.updates == 7
        for m1, m2 in zip(ens.members, loaded.members):
            for a, b in zip(m1.weights + m1.biases, m2.weights + m2.biases):
                np.testing.assert_array_equal(a, b)
        for s1, s2 in zip(ens.adam, loaded.adam):
            assert s1.step == s2.step and s1.lr == s2.lr
            for a, b in zip(s1.m.dws + s1.v.dws, s2.m.dws + s2.v.dws):
                np.testing.assert_array_equal(a, b)

    def test_truncated_checkpoint_is_format_error(self, rng, tmp_path):
        ens = init_ensemble(5, (6,), 2, 0.01, rng)
        path = tmp_path / "ens.ckpt"
        save_ensemble(ens, path)
        lines = path.read_text().splitlines()
        (tmp_path / "cut.ckpt").write_text("\n".join(lines[:-3]) + "\n")
        with pytest.raises(FormatError):
            load_ensemble(tmp_path / "cut.ckpt")
