"""Composite reward components against brute-force oracles."""

import itertools
import math

import numpy as np
import pytest

from safro.core import FusionAction, ItemFeedback
from safro.fusion import RankedList
from safro.reward import (
    RewardConfig,
    composite_reward,
    engagement_gains,
    engagement_reward,
    format_action_reward,
    format_relevance_reward,
    ndcg_value,
)


def dcg_oracle(gains_in_rank_order, cutoff):
    """Independent DCG accumulation with 1/log2(pos + 1), position 1-based."""
    total = 0.0
    for pos, g in enumerate(gains_in_rank_order[:cutoff], start=1):
        total += g / math.log2(pos + 1)
    return total


def ndcg_permutation_oracle(order, gains, cutoff):
    """NDCG normalized by the best DCG over every permutation of the list."""
    best = max(
        dcg_oracle([gains[i] for i in perm], cutoff)
        for perm in itertools.permutations(range(len(gains)))
    )
    if best == 0.0:
        return 0.0
    return dcg_oracle([gains[i] for i in order], cutoff) / best


def _ranked(order, n=None):
    n = n or len(order)
    # fused scores consistent with the order: descending by rank position
    scores = [0.0] * n
    for pos, idx in enumerate(order):
        scores[idx] = float(n - pos)
    return RankedList(order=tuple(order), fused_scores=tuple(scores))


class TestNdcg:
    def test_matches_permutation_oracle(self):
        gen = np.random.default_rng(21)
        for _ in range(50):
            n = int(gen.integers(1, 7))
            gains = gen.uniform(0, 3, size=n).tolist()
            order = list(gen.permutation(n))
            cutoff = int(gen.integers(1, 8))
            got = ndcg_value(order, gains, cutoff)
            want = ndcg_permutation_oracle(order, gains, cutoff)
            assert got == pytest.approx(want, abs=1e-12)

    def test_ideal_order_is_exactly_one(self):
        gen = np.random.default_rng(22)
        for _ in range(20):
            n = int(gen.integers(2, 7))
            gains = gen.uniform(0.1, 5, size=n).tolist()
            ideal = sorted(range(n), key=lambda i: -gains[i])
            assert ndcg_value(ideal, gains, 10) == 1.0

    def test_zero_gains_convention(self):
        assert ndcg_value([0, 1, 2], [0.0, 0.0, 0.0], 10) == 0.0

    def test_single_positive_item(self):
        assert ndcg_value([0], [7.3], 10) == 1.0


def _feedback(clicks, long_plays):
    return [
        ItemFeedback(click=c, long_play=lp, duration=0.0, relevance_label=0.5)
        for c, lp in zip(clicks, long_plays)
    ]


class TestEngagementReward:
    CFG = RewardConfig(click_weight=1.0, longplay_weight=2.0, ndcg_cutoff=10)

    def test_ideal_gain_order_is_one(self):
        fb = _feedback([1, 1, 0], [1, 0, 0])  # gains 3, 1, 0
        assert engagement_reward(_ranked([0, 1, 2]), fb, self.CFG) == 1.0

    def test_all_zero_gains(self):
        fb = _feedback([0, 0, 0], [0, 0, 0])
        assert engagement_reward(_ranked([2, 0, 1]), fb, self.CFG) == 0.0

    def test_matches_permutation_oracle_on_mixed_gains(self):
        gen = np.random.default_rng(23)
        for _ in range(30):
            clicks = gen.integers(0, 2, size=5).tolist()
            lps = [c * int(gen.integers(0, 2)) for c in clicks]
            fb = _feedback(clicks, lps)
            order = list(gen.permutation(5))
            gains = engagement_gains(fb, self.CFG).tolist()
            got = engagement_reward(_ranked(order), fb, self.CFG)
            want = ndcg_permutation_oracle(order, gains, self.CFG.ndcg_cutoff)
            assert got == pytest.approx(want, abs=1e-12)

    def test_equal_gain_permutation_invariance(self):
        fb = _feedback([1, 1, 1], [0, 0, 0])
        values = {
            engagement_reward(_ranked(list(p)), fb, self.CFG)
            for p in itertools.permutations(range(3))
        }
        assert values == {1.0}

    def test_misaligned_feedback_rejected(self):
        fb = _feedback([1, 0], [0, 0])
        with pytest.raises(ValueError):
            engagement_reward(_ranked([0, 1, 2]), fb, self.CFG)


class TestFormatRewards:
    def test_feasible_action(self):
        assert format_action_reward(FusionAction((0, 1), (0.5, 0.5)), 0.01) == 0.0

    def test_infeasible_action(self):
        assert format_action_reward(FusionAction((0, 1), (0.6, 0.6)), 0.01) == -1.0

    def test_boundary_sum_inclusive(self):
        xi = 0.25
        assert format_action_reward(FusionAction((0,), (1.0 + xi,)), xi) == 0.0
        assert format_action_reward(FusionAction((0,), (1.0 - xi,)), xi) == 0.0

    def test_relevance_all_above_threshold(self):
        rel = [0.9, 0.5, 0.31]
        assert format_relevance_reward(_ranked([0, 1, 2]), rel, 0.3, 10) == 0.0

    def test_relevance_violation_in_top_k(self):
        rel = [0.9, 0.1, 0.8]
        assert format_relevance_reward(_ranked([0, 1, 2]), rel, 0.3, 2) == -2.0

    def test_violation_below_top_k_ignored(self):
        rel = [0.9, 0.8, 0.1]
        assert format_relevance_reward(_ranked([0, 1, 2]), rel, 0.3, 2) == 0.0

    def test_exact_threshold_not_penalized(self):
        rel = [0.3, 0.3, 0.3]
        assert format_relevance_reward(_ranked([0, 1, 2]), rel, 0.3, 10) == 0.0


class TestComposite:
    def test_extremes(self):
        assert composite_reward(1.0, 1.0, 0.0, 0.0) == 2.0
        assert composite_reward(0.0, 0.0, -1.0, -2.0) == -3.0

    def test_additivity(self):
        base = composite_reward(0.4, 0.3, 0.0, -2.0)
        assert composite_reward(0.4, 0.3 + 0.17, 0.0, -2.0) == pytest.approx(base + 0.17)

    def test_range(self):
        gen = np.random.default_rng(29)
        for _ in range(200):
            r = composite_reward(
                float(gen.uniform(0, 1)),
                float(gen.uniform(0, 1)),
                float(gen.choice([0.0, -1.0])),
                float(gen.choice([0.0, -2.0])),
            )
            assert -3.0 <= r <= 2.0
