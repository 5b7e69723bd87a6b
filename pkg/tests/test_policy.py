"""Policy network: distributions, sampling, entropy, and exact gradients."""

import itertools
import math

import numpy as np
import pytest

from safro.core import SeededRng
from safro.fusion import ActionSpace, enumerate_feasible
from safro.policy import (
    FusionPolicy,
    NonFiniteOutputError,
    PolicyConfig,
    apply_gradient_step,
)


def make_policy(
    k=3, B=4, feature_dim=6, d_h=8, d=4, traf=True, hard=False, seed=0, tolerance=0.01
):
    cfg = PolicyConfig(
        num_tasks=k,
        num_bins=B,
        feature_dim=feature_dim,
        hidden_width=d_h,
        encoder_layers=2,
        relation_dim=d,
        use_task_relations=traf,
        hard_feasible=hard,
    )
    space = ActionSpace.uniform(k, B, 0.0, 1.0, tolerance=tolerance)
    return FusionPolicy(cfg, space, rng=SeededRng(seed).split("init"))


def scalar_objective(policy, x, action, c1, c2):
    out = policy.forward(x)
    return c1 * policy.log_prob(out, action) + c2 * policy.entropy(out)


class TestForward:
    def test_zero_relations_give_uniform_attention(self):
        policy = make_policy()
        policy.params.relation_w[:] = 0.0
        out = policy.forward(np.ones(6))
        np.testing.assert_allclose(out.attention, np.full((3, 3), 1.0 / 3), atol=1e-15)

    def test_single_task_degenerate_attention(self):
        policy = make_policy(k=1, B=4, tolerance=2.0)
        x = np.linspace(-1, 1, 6)
        out = policy.forward(x)
        np.testing.assert_allclose(out.attention, [[1.0]], atol=1e-15)
        # refined logits collapse to (gate + 1) * base logits
        h_out = out.refined_logits[0]
        base = (
            np.einsum("khb,h->kb", policy.params.head_w, _hidden(policy, x))
            + policy.params.head_b
        )[0]
        np.testing.assert_allclose(h_out, (out.gates[0] + 1.0) * base, rtol=1e-12)

    def test_deterministic_given_params(self):
        policy = make_policy(seed=3)
        x = np.linspace(0, 1, 6)
        a = policy.forward(x)
        b = policy.forward(x)
        np.testing.assert_array_equal(a.distributions, b.distributions)

    def test_rows_sum_to_one(self):
        policy = make_policy(seed=5)
        out = policy.forward(np.linspace(-2, 2, 6))
        np.testing.assert_allclose(out.distributions.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(out.attention.sum(axis=1), 1.0, atol=1e-12)

    def test_interaction_scores_symmetric(self):
        policy = make_policy(seed=7)
        x = np.linspace(-1, 2, 6)
        h = _hidden(policy, x)
        u = np.einsum("khd,h->kd", policy.params.relation_w, h)
        e = u @ u.T
        np.testing.assert_allclose(e, e.T, atol=1e-15)
        out = policy.forward(x)
        # rows are softmax of e rows
        expected = np.exp(e - e.max(axis=1, keepdims=True))
        expected /= expected.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(out.attention, expected, atol=1e-12)

    def test_shift_invariance_of_base_logits(self):
        policy = make_policy(seed=9)
        x = np.linspace(-1, 1, 6)
        before = policy.forward(x).distributions
        policy.params.head_b += 3.7
        after = policy.forward(x).distributions
        np.testing.assert_allclose(before, after, atol=1e-12)

    def test_non_finite_reported_with_location(self):
        policy = make_policy(seed=11)
        policy.params.head_w[0, 0, 0] = np.inf
        with pytest.raises(NonFiniteOutputError) as err:
            policy.forward(np.ones(6))
        assert "logit" in str(err.value)

    def test_feature_dim_checked(self):
        policy = make_policy()
        with pytest.raises(ValueError):
            policy.forward(np.ones(7))


def _hidden(policy, x):
    from safro.nets import mlp_forward

    h, _ = mlp_forward(policy.params.encoder, np.asarray(x, float), relu_last=True)
    return h


class TestSampling:
    def test_near_deterministic_head(self):
        policy = make_policy(traf=False, seed=13)
        policy.params.head_b[:, 0] = 50.0  # huge margin on bin 0
        out = policy.forward(np.zeros(6))
        rng = SeededRng(1).split("draw")
        for g in range(20):
            action, lp = policy.sample_action(out, rng.split(str(g)))
            assert action.bin_indices == (0, 0, 0)
            assert lp == pytest.approx(0.0, abs=1e-6)

    def test_uniform_log_prob(self):
        policy = make_policy(seed=15)
        policy.params.head_w[:] = 0.0
        policy.params.head_b[:] = 0.0
        policy.params.relation_w[:] = 0.0
        out = policy.forward(np.zeros(6))
        rng = SeededRng(2).split("draw")
        action, lp = policy.sample_action(out, rng)
        assert lp == pytest.approx(-3 * math.log(4), rel=1e-12)

    def test_empirical_frequencies_match_distribution(self):
        policy = make_policy(k=2, B=3, seed=17)
        out = policy.forward(np.linspace(0, 1, 6))
        n = 100_000
        gen = SeededRng(3).split("mc").generator
        counts = np.zeros((2, 3))
        # draw with one generator for speed; per-task inverse-cdf like sampling
        for i in range(2):
            u = gen.random(n)
            cdf = np.cumsum(out.distributions[i])
            counts[i] = np.bincount(np.searchsorted(cdf, u), minlength=3)[:3]
        freq = counts / n
        for i in range(2):
            for b in range(3):
                p = out.distributions[i, b]
                se = math.sqrt(p * (1 - p) / n)
                assert abs(freq[i, b] - p) <= 3 * se + 1e-12

    def test_log_prob_consistent_with_sampling(self):
        policy = make_policy(seed=19)
        out = policy.forward(np.linspace(-1, 1, 6))
        rng = SeededRng(4).split("draw")
        for g in range(10):
            action, lp = policy.sample_action(out, rng.split(str(g)))
            assert policy.log_prob(out, action) == pytest.approx(lp, rel=1e-12)

    def test_out_of_range_action_rejected(self):
        policy = make_policy()
        out = policy.forward(np.zeros(6))
        from safro.core import FusionAction

        with pytest.raises(ValueError):
            policy.log_prob(out, FusionAction((0, 0, 9), (0.0, 0.0, 0.0)))


class TestMassAndEntropy:
    @pytest.mark.parametrize("k,B", [(1, 5), (2, 4), (3, 3)])
    def test_probability_mass_sums_to_one(self, k, B):
        policy = make_policy(k=k, B=B, seed=21, tolerance=2.0)
        out = policy.forward(np.linspace(0, 1, 6))
        total = sum(
            math.exp(policy.log_prob(out, policy.space.action_from_bins(c)))
            for c in itertools.product(range(B), repeat=k)
        )
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_entropy_matches_exhaustive_joint(self):
        policy = make_policy(k=3, B=3, seed=23)
        out = policy.forward(np.linspace(-1, 1, 6))
        joint = 0.0
        for c in itertools.product(range(3), repeat=3):
            p = math.exp(policy.log_prob(out, policy.space.action_from_bins(c)))
            joint -= p * math.log(p)
        assert policy.entropy(out) == pytest.approx(joint, abs=1e-10)

    def test_uniform_entropy_is_k_ln_B(self):
        policy = make_policy(k=3, B=4, seed=25)
        policy.params.head_w[:] = 0.0
        policy.params.head_b[:] = 0.0
        policy.params.relation_w[:] = 0.0
        out = policy.forward(np.zeros(6))
        assert policy.entropy(out) == pytest.approx(3 * math.log(4), rel=1e-12)

    def test_deterministic_entropy_is_zero(self):
        policy = make_policy(traf=False, seed=27)
        policy.params.head_b[:, 1] = 200.0
        out = policy.forward(np.zeros(6))
        assert policy.entropy(out) == pytest.approx(0.0, abs=1e-12)


class TestHardFeasibleMode:
    def test_mass_sums_to_one_over_feasible_set(self):
        policy = make_policy(k=3, B=4, hard=True, seed=29, tolerance=0.05)
        out = policy.forward(np.linspace(0, 1, 6))
        feas = enumerate_feasible(policy.space)
        total = sum(math.exp(policy.log_prob(out, a)) for a in feas)
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_infeasible_action_rejected(self):
        policy = make_policy(k=2, B=3, hard=True, seed=31, tolerance=0.01)
        out = policy.forward(np.zeros(6))
        bad = policy.space.action_from_bins((2, 2))  # weights sum to 2
        with pytest.raises(ValueError):
            policy.log_prob(out, bad)

    def test_sampling_stays_feasible(self):
        policy = make_policy(k=2, B=3, hard=True, seed=33, tolerance=0.01)
        out = policy.forward(np.zeros(6))
        rng = SeededRng(5).split("draw")
        for g in range(50):
            action, lp = policy.sample_action(out, rng.split(str(g)))
            assert abs(action.weight_sum - 1.0) <= policy.space.tolerance
            assert policy.log_prob(out, action) == pytest.approx(lp, rel=1e-12)

    def test_entropy_matches_enumeration(self):
        policy = make_policy(k=2, B=4, hard=True, seed=35, tolerance=0.05)
        out = policy.forward(np.linspace(-1, 1, 6))
        feas = enumerate_feasible(policy.space)
        joint = 0.0
        for a in feas:
            p = math.exp(policy.log_prob(out, a))
            joint -= p * math.log(p)
        assert policy.entropy(out) == pytest.approx(joint, abs=1e-12)


def fd_gradients(policy, x, action, c1, c2, h=1e-6):
    out = {}
    for name, p in policy.params.named_tensors():
        fd = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = scalar_objective(policy, x, action, c1, c2)
            p[idx] = orig - h
            dn = scalar_objective(policy, x, action, c1, c2)
            p[idx] = orig
            fd[idx] = (up - dn) / (2 * h)
        out[name] = fd
    return out


@pytest.mark.parametrize("traf,hard", [(True, False), (False, False), (True, True)])
class TestBackward:
    def test_matches_finite_differences(self, traf, hard):
        rng = SeededRng(41)
        for trial in range(3):
            policy = make_policy(traf=traf, hard=hard, seed=100 + trial, tolerance=0.05)
            gen = rng.split(f"draw-{trial}").generator
            x = gen.normal(size=6)
            out = policy.forward(x)
            action, _ = policy.sample_action(out, rng.split(f"act-{trial}"))
            c1, c2 = float(gen.normal()), float(gen.normal())
            grads = dict(policy.backward(x, action, c1, c2).named_tensors())
            fd = fd_gradients(policy, x, action, c1, c2)
            for name in fd:
                denom = max(np.linalg.norm(fd[name]), 1e-12)
                assert np.linalg.norm(fd[name] - grads[name]) / denom < 1e-4, name

    def test_zero_coefficients_zero_gradient(self, traf, hard):
        policy = make_policy(traf=traf, hard=hard, seed=43, tolerance=0.05)
        x = np.linspace(0, 1, 6)
        out = policy.forward(x)
        action, _ = policy.sample_action(out, SeededRng(6).split("a"))
        grads = policy.backward(x, action, 0.0, 0.0)
        for _, g in grads.named_tensors():
            assert np.all(g == 0.0)


class TestLogitGradientIdentity:
    def test_logprob_gradient_at_refined_logits(self):
        # d log pi / d refined logits is one_hot(bin) - pi per task.
        policy = make_policy(seed=45)
        x = np.linspace(-1, 1, 6)
        out = policy.forward(x)
        action, _ = policy.sample_action(out, SeededRng(7).split("a"))
        g = policy._dlogits_log_prob(out, action)
        expected = -out.distributions.copy()
        for i, b in enumerate(action.bin_indices):
            expected[i, b] += 1.0
        np.testing.assert_allclose(g, expected, atol=1e-12)


class TestBatchBackward:
    def test_batch_equals_sum_of_singles(self):
        policy = make_policy(seed=47)
        x = np.linspace(-2, 2, 6)
        out = policy.forward(x)
        rng = SeededRng(8).split("a")
        actions, coefs = [], []
        for g in range(4):
            action, _ = policy.sample_action(out, rng.split(str(g)))
            actions.append(action)
            coefs.append(0.3 * (g + 1))
        batch = dict(
            policy.backward_batch(x, actions, coefs, entropy_coef=0.7).named_tensors()
        )
        total = None
        for action, c in zip(actions, coefs):
            single = policy.backward(x, action, c, 0.0)
            if total is None:
                total = single
            else:
                total.add(single)
        total.add(policy.backward(x, actions[0], 0.0, 0.7))
        for name, g in total.named_tensors():
            np.testing.assert_allclose(batch[name], g, atol=1e-12)


class TestPersistence:
    def test_checkpoint_roundtrip(self, tmp_path):
        policy = make_policy(seed=49)
        path = tmp_path / "policy.bin"
        policy.save(path)
        loaded = FusionPolicy.load(path)
        assert loaded.config == policy.config
        assert loaded.space == policy.space
        x = np.linspace(0, 1, 6)
        np.testing.assert_array_equal(
            loaded.forward(x).distributions, policy.forward(x).distributions
        )


class TestGradientStep:
    def test_ascends_objective(self):
        policy = make_policy(seed=51)
        x = np.linspace(-1, 1, 6)
        out = policy.forward(x)
        action, _ = policy.sample_action(out, SeededRng(9).split("a"))
        before = scalar_objective(policy, x, action, 1.0, 0.0)
        grads = policy.backward(x, action, 1.0, 0.0)
        apply_gradient_step(policy.params, grads, learning_rate=0.05)
        after = scalar_objective(policy, x, action, 1.0, 0.0)
        assert after > before
