"""Composite reward: engagement NDCG, satisfaction, and format penalties.

The composite reward of a (state, action, ranked list) triple is the plain
sum r_eng + r_sat + r_fmt_action + r_fmt_relevance, bounded in [-3, 2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import FusionAction, ItemFeedback
from .fusion import RankedList


@dataclass(frozen=True)
class RewardConfig:
    """Engagement gains, NDCG cutoff, and format-constraint parameters.

    Long-play is weighted above click as the stronger engagement signal.
    `feasibility_tolerance` is the same xi as in the action space.
    """

    click_weight: float = 1.0
    longplay_weight: float = 2.0
    ndcg_cutoff: int = 10
    relevance_threshold: float = 0.3
    relevance_top_k: int = 10
    feasibility_tolerance: float = 0.01

    def __post_init__(self):
        if self.click_weight < 0.0 or self.longplay_weight < 0.0:
            raise ValueError("gain weights must be >= 0")
        if self.ndcg_cutoff < 1:
            raise ValueError(f"ndcg_cutoff must be >= 1, got {self.ndcg_cutoff!r}")
        if not 0.0 < self.relevance_threshold < 1.0:
            raise ValueError(
                f"relevance_threshold must be in (0, 1), got {self.relevance_threshold!r}"
            )
        if self.relevance_top_k < 1:
            raise ValueError(f"relevance_top_k must be >= 1, got {self.relevance_top_k!r}")
        if not self.feasibility_tolerance > 0.0:
            raise ValueError("feasibility_tolerance must be > 0")

    def to_dict(self) -> dict:
        return {
            "click_weight": self.click_weight,
            "longplay_weight": self.longplay_weight,
            "ndcg_cutoff": self.ndcg_cutoff,
            "relevance_threshold": self.relevance_threshold,
            "relevance_top_k": self.relevance_top_k,
            "feasibility_tolerance": self.feasibility_tolerance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        return cls(**d)


def ndcg_value(order: Sequence[int], gains: Sequence[float], cutoff: int) -> float:
    """NDCG with 1/log2(pos+1) discount; 0 by convention when the ideal DCG is 0.

    `gains[i]` belongs to candidate i; `order` lists candidates by rank.
    """
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff!r}")
    gains = np.asarray(gains, dtype=np.float64)
    depth = min(cutoff, len(order))
    discounts = 1.0 / np.log2(np.arange(2, depth + 2))
    ranked_gains = gains[np.asarray(order[:depth], dtype=np.intp)]
    # contiguous copy so a gain-descending order reproduces the ideal DCG
    # bit for bit
    ideal_gains = np.ascontiguousarray(np.sort(gains)[::-1][:depth])
    idcg = float(ideal_gains @ discounts)
    if idcg == 0.0:
        return 0.0
    return float(ranked_gains @ discounts) / idcg


def engagement_gains(feedback: Sequence[ItemFeedback], cfg: RewardConfig) -> np.ndarray:
    return np.asarray(
        [cfg.click_weight * f.click + cfg.longplay_weight * f.long_play for f in feedback],
        dtype=np.float64,
    )


def engagement_reward(
    ranked: RankedList, feedback: Sequence[ItemFeedback], cfg: RewardConfig
) -> float:
    """NDCG-style reward over click/long-play gains at the configured cutoff."""
    if len(feedback) != len(ranked):
        raise ValueError(
            f"feedback length {len(feedback)} does not match list length {len(ranked)}"
        )
    return ndcg_value(ranked.order, engagement_gains(feedback, cfg), cfg.ndcg_cutoff)


def format_action_reward(action: FusionAction, tolerance: float) -> float:
    """0 when the weight sum deviates from 1 by at most `tolerance`, else -1."""
    return 0.0 if abs(action.weight_sum - 1.0) <= tolerance else -1.0


def format_relevance_reward(
    ranked: RankedList, relevance: Sequence[float], threshold: float, top_k: int
) -> float:
    """-2 when any of the first min(top_k, length) ranked items falls strictly
    below the relevance threshold, else 0."""
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k!r}")
    for pos in range(min(top_k, len(ranked))):
        if relevance[ranked.order[pos]] < threshold:
            return -2.0
    return 0.0


def composite_reward(r_eng: float, r_sat: float, r_fmt_a: float, r_fmt_r: float) -> float:
    return r_eng + r_sat + r_fmt_a + r_fmt_r
