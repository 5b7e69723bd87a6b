"""Advantage normalization, the clipped surrogate, and the training loop."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safro.core import SeededRng
from safro.drpo import (
    AdvantageBatch,
    DrpoConfig,
    IterationMetrics,
    batch_shift,
    dual_advantage,
    group_advantage,
    surrogate_objective,
    train,
)
from safro.fusion import ActionSpace
from safro.policy import FusionPolicy, PolicyConfig

# Frozen oracle: rewards (1,2,3) have population std sqrt(2/3), so the
# endpoint advantages are +-sqrt(3/2).
ENDPOINT_123 = 1.224744871391589


def _cfg(**kw):
    defaults = dict(group_size=4, batch_size=4, iterations=10)
    defaults.update(kw)
    return DrpoConfig(**defaults)


class TestGroupAdvantage:
    def test_symmetric_middle_is_zero(self):
        adv, mean, std = group_advantage([1.0, 2.0, 3.0])
        assert adv[1] == 0.0
        assert mean == 2.0

    def test_degenerate_group_floors_to_zero(self):
        adv, _, std = group_advantage([5.0, 5.0, 5.0])
        np.testing.assert_array_equal(adv, 0.0)
        assert std == 0.0

    def test_endpoints_match_direct_formula(self):
        adv, _, _ = group_advantage([1.0, 2.0, 3.0])
        assert adv[0] == pytest.approx(-ENDPOINT_123, rel=1e-12)
        assert adv[2] == pytest.approx(+ENDPOINT_123, rel=1e-12)

    def test_too_small_group_rejected(self):
        with pytest.raises(ValueError):
            group_advantage([1.0])

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=32))
    @settings(max_examples=100, deadline=None)
    def test_zero_sum_when_above_floor(self, rewards):
        adv, _, std = group_advantage(rewards)
        if std >= 1e-8:
            assert abs(adv.sum()) < 1e-9


class TestBatchShift:
    def test_two_groups(self):
        shifts, mean, std = batch_shift([1.0, 3.0])
        np.testing.assert_allclose(shifts, [-1.0, 1.0], rtol=1e-12)
        assert mean == 2.0 and std == 1.0

    def test_equal_means_floor(self):
        shifts, _, _ = batch_shift([2.0, 2.0, 2.0])
        np.testing.assert_array_equal(shifts, 0.0)

    def test_centering(self):
        gen = np.random.default_rng(0)
        shifts, _, _ = batch_shift(gen.uniform(0, 5, size=16))
        assert abs(shifts.sum()) < 1e-9

    def test_too_small_batch_rejected(self):
        with pytest.raises(ValueError):
            batch_shift([1.0])


class TestDualAdvantage:
    def test_pairwise_differences_are_group_differences(self):
        gen = np.random.default_rng(1)
        cfg = _cfg(group_size=8, batch_size=6)
        batch = dual_advantage(gen.normal(size=(6, 8)), cfg)
        diff = batch.dual_advantages - batch.group_advantages
        # constant within each group up to rounding
        spread = diff.max(axis=1) - diff.min(axis=1)
        assert spread.max() <= 1e-12

    def test_global_zero_sum(self):
        gen = np.random.default_rng(2)
        cfg = _cfg(group_size=8, batch_size=6)
        batch = dual_advantage(gen.normal(size=(6, 8)), cfg)
        assert abs(batch.dual_advantages.sum()) <= 1e-9 * 48

    def test_group_only_reproduces_plain_normalization(self):
        gen = np.random.default_rng(3)
        rewards = gen.normal(size=(4, 4))
        dual = dual_advantage(rewards, _cfg(advantage_mode="dual"))
        plain = dual_advantage(rewards, _cfg(advantage_mode="group_only"))
        np.testing.assert_array_equal(plain.batch_shifts, 0.0)
        np.testing.assert_array_equal(plain.dual_advantages, plain.group_advantages)
        np.testing.assert_array_equal(plain.group_advantages, dual.group_advantages)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            dual_advantage(np.zeros((3, 4)), _cfg(group_size=4, batch_size=4))

    def test_monotone_group_modulation(self):
        # Groups ordered by quality get strictly increasing summed shifts.
        gen = np.random.default_rng(4)
        base = np.linspace(0.0, 4.0, 5)[:, None]
        rewards = base + gen.uniform(-0.3, 0.3, size=(5, 6))
        cfg = _cfg(group_size=6, batch_size=5)
        batch = dual_advantage(rewards, cfg)
        order = np.argsort(batch.group_means)
        shifts = batch.batch_shifts[order]
        assert np.all(np.diff(shifts) > 0)
        total_per_group = batch.dual_advantages.sum(axis=1)[order]
        assert np.all(np.diff(total_per_group) > 0)


class TestSurrogate:
    def test_ratio_one_reduces_to_entropy_bonus(self):
        gen = np.random.default_rng(5)
        cfg = _cfg(group_size=8, batch_size=4, entropy_coef=0.05)
        lp = gen.normal(size=(4, 8))
        adv = dual_advantage(gen.normal(size=(4, 8)), cfg).dual_advantages
        ent = gen.uniform(0.5, 2.0, size=4)
        objective, dcoef, stats = surrogate_objective(lp, lp, adv, ent, cfg)
        assert objective == pytest.approx(0.05 * ent.mean(), abs=1e-12)
        assert stats["clip_fraction"] == 0.0

    def test_clip_upper_branch(self):
        cfg = _cfg(group_size=2, batch_size=2, clip_epsilon=0.2, entropy_coef=0.0)
        old = np.zeros((2, 2))
        new = np.full((2, 2), math.log(2.0))  # ratio 2
        adv = np.ones((2, 2))
        objective, dcoef, stats = surrogate_objective(new, old, adv, np.zeros(2), cfg)
        assert objective == pytest.approx(1.2, rel=1e-12)
        np.testing.assert_array_equal(dcoef, 0.0)  # clipped branch is constant
        assert stats["clip_fraction"] == 1.0

    def test_gradient_coefficient_matches_finite_difference(self):
        gen = np.random.default_rng(6)
        cfg = _cfg(group_size=4, batch_size=3, entropy_coef=0.0, clip_epsilon=0.2)
        old = gen.normal(size=(3, 4))
        new = old + gen.uniform(-0.4, 0.4, size=(3, 4))
        adv = gen.normal(size=(3, 4))
        _, dcoef, _ = surrogate_objective(new, old, adv, np.zeros(3), cfg)
        h = 1e-7
        for i in range(3):
            for g in range(4):
                up = new.copy()
                up[i, g] += h
                dn = new.copy()
                dn[i, g] -= h
                o_up, _, _ = surrogate_objective(up, old, adv, np.zeros(3), cfg)
                o_dn, _, _ = surrogate_objective(dn, old, adv, np.zeros(3), cfg)
                fd = (o_up - o_dn) / (2 * h)
                assert fd == pytest.approx(dcoef[i, g], rel=1e-5, abs=1e-9)

    def test_non_finite_rejected(self):
        cfg = _cfg()
        bad = np.full((4, 4), np.nan)
        with pytest.raises(ValueError):
            surrogate_objective(bad, bad, bad, np.zeros(4), cfg)


class _BanditEnv:
    """Constant-state two-action bandit: bin 1 pays 1, bin 0 pays 0."""

    def __init__(self, n_states=4):
        self._n = n_states

    def num_states(self):
        return self._n

    def state_features(self, index):
        return np.array([1.0, 0.0])

    def score(self, index, action, rng):
        return 1.0 if action.bin_indices[0] == 1 else 0.0


def _bandit_policy(seed):
    cfg = PolicyConfig(
        num_tasks=1, num_bins=2, feature_dim=2, hidden_width=8, encoder_layers=1,
        relation_dim=2,
    )
    space = ActionSpace(bins=((0.0, 1.0),), tolerance=0.01, bounds=((0.0, 1.0),))
    return FusionPolicy(cfg, space, rng=SeededRng(seed).split("policy-init"))


class TestTraining:
    def test_bandit_converges_to_good_action(self):
        cfg = DrpoConfig(
            group_size=8,
            batch_size=4,
            learning_rate=0.4,
            entropy_coef=0.01,
            epochs_per_batch=2,
            iterations=120,
        )
        policy = _bandit_policy(seed=0)
        env = _BanditEnv()
        policy, metrics = train(env, policy, cfg, SeededRng(0).split("train"))
        out = policy.forward(env.state_features(0))
        assert out.distributions[0, 1] > 0.99
        assert metrics[-1].mean_reward > 0.9

    def test_large_entropy_keeps_policy_near_uniform(self):
        cfg = DrpoConfig(
            group_size=8, batch_size=4, learning_rate=0.1, entropy_coef=20.0,
            iterations=80,
        )
        policy = _bandit_policy(seed=1)
        env = _BanditEnv()
        policy, _ = train(env, policy, cfg, SeededRng(1).split("train"))
        out = policy.forward(env.state_features(0))
        max_entropy = math.log(2.0)
        assert policy.entropy(out) > 0.99 * max_entropy

    def test_ratio_identity_at_first_epoch(self):
        # With a single surrogate epoch the update always evaluates at the
        # snapshot, so no sample is ever clipped.
        cfg = DrpoConfig(
            group_size=4, batch_size=4, epochs_per_batch=1, learning_rate=0.1,
            iterations=5,
        )
        policy = _bandit_policy(seed=2)
        _, metrics = train(_BanditEnv(), policy, cfg, SeededRng(2).split("train"))
        assert all(m.clip_fraction == 0.0 for m in metrics)

    def test_trace_file_is_deterministic(self, tmp_path):
        cfg = DrpoConfig(group_size=4, batch_size=4, iterations=5, learning_rate=0.1)
        paths = []
        for run in range(2):
            policy = _bandit_policy(seed=3)
            path = tmp_path / f"trace{run}.jsonl"
            train(_BanditEnv(), policy, cfg, SeededRng(3).split("train"), trace_path=path)
            paths.append(path.read_bytes())
        assert paths[0] == paths[1]

    def test_metrics_schema(self):
        cfg = DrpoConfig(group_size=4, batch_size=4, iterations=2, learning_rate=0.1)
        policy = _bandit_policy(seed=4)
        _, metrics = train(_BanditEnv(), policy, cfg, SeededRng(4).split("train"))
        row = metrics[0].to_dict()
        assert set(row) == {
            "iteration", "mean_reward", "mean_entropy", "clip_fraction",
            "mean_abs_shift", "objective",
        }


class TestConfigValidation:
    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError):
            DrpoConfig(group_size=1)
        with pytest.raises(ValueError):
            DrpoConfig(batch_size=1)
        with pytest.raises(ValueError):
            DrpoConfig(clip_epsilon=1.5)
        with pytest.raises(ValueError):
            DrpoConfig(advantage_mode="both")
        with pytest.raises(ValueError):
            DrpoConfig(std_floor=0.0)
