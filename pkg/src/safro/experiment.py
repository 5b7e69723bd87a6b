"""Wiring between the environment, reward model, and policy trainer.

Counterfactual rankings sampled during policy training are scored with the
environment's ground-truth feedback function, since logged feedback exists
only for the one ranking that was actually shown.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from .core import FusionAction, SeededRng
from .drpo import DrpoConfig
from .fusion import rank
from .policy import PolicyConfig
from .reward import (
    RewardConfig,
    composite_reward,
    engagement_reward,
    format_action_reward,
    format_relevance_reward,
)
from .satisfaction import (
    RewardModelParams,
    SatConfig,
    confidence,
    list_features,
    predict_satisfaction,
    r_sat,
)
from .simenv import LoggedEpisode, PoolEntry, SearchEnvironment

VARIANTS = ("full", "no-sat", "no-batch-adv", "no-traf")


def apply_variant(
    variant: str, policy_cfg: PolicyConfig, drpo_cfg: DrpoConfig
) -> tuple[PolicyConfig, DrpoConfig, bool]:
    """Resolve an ablation name into config switches.

    Returns (policy config, trainer config, include_satisfaction).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    include_sat = variant != "no-sat"
    if variant == "no-traf":
        policy_cfg = replace(policy_cfg, use_task_relations=False)
    if variant == "no-batch-adv":
        drpo_cfg = replace(drpo_cfg, advantage_mode="group_only")
    return policy_cfg, drpo_cfg, include_sat


class SafroRolloutEnv:
    """Rollout handle scoring composite rewards for sampled fusion actions."""

    def __init__(
        self,
        env: SearchEnvironment,
        entries: Sequence[PoolEntry],
        reward_cfg: RewardConfig,
        reward_model: RewardModelParams | None = None,
        include_satisfaction: bool = True,
    ):
        if include_satisfaction and reward_model is None:
            raise ValueError("satisfaction scoring requires a trained reward model")
        self.env = env
        self.entries = list(entries)
        self.reward_cfg = reward_cfg
        self.reward_model = reward_model
        self.include_satisfaction = include_satisfaction

    def num_states(self) -> int:
        return len(self.entries)

    def state_features(self, index: int) -> np.ndarray:
        return np.asarray(self.entries[index].state_features, dtype=np.float64)

    def score(self, index: int, action: FusionAction, rng: SeededRng) -> float:
        entry = self.entries[index]
        ranked = rank([c.scores for c in entry.candidates], action.weights)
        feedback = self.env.realize_feedback(entry, ranked, rng.split("feedback"))
        r_eng = engagement_reward(ranked, feedback, self.reward_cfg)
        if self.include_satisfaction:
            sat = predict_satisfaction(
                self.reward_model,
                np.asarray(entry.state_features, dtype=np.float64),
                list_features(entry.candidates, feedback, order=ranked.order),
            )
        else:
            sat = 0.0
        fmt_a = format_action_reward(action, self.reward_cfg.feasibility_tolerance)
        fmt_r = format_relevance_reward(
            ranked,
            [c.relevance for c in entry.candidates],
            self.reward_cfg.relevance_threshold,
            self.reward_cfg.relevance_top_k,
        )
        return composite_reward(r_eng, sat, fmt_a, fmt_r)


def split_pool(
    pool: Sequence[PoolEntry], heldout_count: int
) -> tuple[list[PoolEntry], list[PoolEntry]]:
    """Deterministic train/held-out split: the last `heldout_count` entries."""
    if heldout_count < 0 or heldout_count >= len(pool):
        raise ValueError(
            f"heldout_count must be in [0, {len(pool)}), got {heldout_count!r}"
        )
    cut = len(pool) - heldout_count
    return list(pool[:cut]), list(pool[cut:])


def reward_model_dataset(
    logged: Sequence[LoggedEpisode], cfg: SatConfig
) -> list[tuple]:
    """(episode, satisfaction target, confidence weight) training rows."""
    return [
        (
            rec.episode,
            r_sat(rec.episode, cfg),
            confidence(rec.episode, rec.future_clicks, rec.future_long_plays),
        )
        for rec in logged
    ]
