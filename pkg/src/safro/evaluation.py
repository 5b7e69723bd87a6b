"""Offline metrics: per-signal NDCG, satisfaction, retention, and the
session-gap/retention trade-off analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import QueryEpisode, SeededRng
from .fusion import RankedList, rank
from .policy import FusionPolicy
from .reward import (
    RewardConfig,
    composite_reward,
    engagement_reward,
    format_action_reward,
    format_relevance_reward,
    ndcg_value,
)
from .satisfaction import (
    RewardModelParams,
    SatConfig,
    gap_score,
    list_features,
    predict_satisfaction,
)
from .simenv import PoolEntry, SearchEnvironment

EVAL_SIGNALS = ("click", "long_play", "duration", "relevance")


def ndcg_at(ranked: RankedList, gains: Sequence[float], cutoff: int) -> float:
    """Standard NDCG with 1/log2(pos+1) discount; 0 when the ideal DCG is 0."""
    return ndcg_value(ranked.order, gains, cutoff)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation; raises on zero variance in either series."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] < 2:
        raise ValueError("series must be 1-D, aligned, and hold at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt((xc**2).sum()))
    sy = float(np.sqrt((yc**2).sum()))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("correlation undefined for a zero-variance series")
    return float((xc @ yc) / (sx * sy))


def _feedback_gains(feedback, signal: str) -> list[float]:
    if signal == "click":
        return [float(f.click) for f in feedback]
    if signal == "long_play":
        return [float(f.long_play) for f in feedback]
    if signal == "duration":
        return [f.duration for f in feedback]
    if signal == "relevance":
        return [f.relevance_label for f in feedback]
    raise ValueError(f"unknown signal {signal!r}")


def _evaluate_rankings(
    env: SearchEnvironment,
    entries: Sequence[PoolEntry],
    choose,
    reward_model: RewardModelParams | None,
    reward_cfg: RewardConfig,
    rng: SeededRng,
) -> dict:
    """Shared evaluation core; `choose(entry) -> (weights, fmt_action_reward)`."""
    if not entries:
        raise ValueError("no entries to evaluate")
    ndcg_sums = {s: 0.0 for s in EVAL_SIGNALS}
    sat_sum = 0.0
    ret_sum = 0.0
    comp_sum = 0.0
    eng_sum = 0.0
    fmt_a_sum = 0.0
    fmt_r_sum = 0.0
    for i, entry in enumerate(entries):
        weights, fmt_a = choose(entry)
        ranked = rank([c.scores for c in entry.candidates], weights)
        ep_rng = rng.split(f"episode-{i}")
        feedback = env.realize_feedback(entry, ranked, ep_rng.split("feedback"))
        outcomes = env.realize_outcomes(entry, ranked, feedback, ep_rng.split("outcomes"))
        for s in EVAL_SIGNALS:
            ndcg_sums[s] += ndcg_value(
                ranked.order, _feedback_gains(feedback, s), reward_cfg.ndcg_cutoff
            )
        r_eng = engagement_reward(ranked, feedback, reward_cfg)
        if reward_model is not None:
            sat = predict_satisfaction(
                reward_model,
                np.asarray(entry.state_features, dtype=np.float64),
                list_features(entry.candidates, feedback, order=ranked.order),
            )
        else:
            sat = 0.0
        fmt_r = format_relevance_reward(
            ranked,
            [c.relevance for c in entry.candidates],
            reward_cfg.relevance_threshold,
            reward_cfg.relevance_top_k,
        )
        comp_sum += composite_reward(r_eng, sat, fmt_a, fmt_r)
        eng_sum += r_eng
        sat_sum += sat
        fmt_a_sum += fmt_a
        fmt_r_sum += fmt_r
        ret_sum += outcomes.retention_probability
    n = float(len(entries))
    report = {f"ndcg_{s}": ndcg_sums[s] / n for s in EVAL_SIGNALS}
    report["ndcg_average"] = sum(ndcg_sums.values()) / (len(EVAL_SIGNALS) * n)
    report["mean_predicted_satisfaction"] = sat_sum / n
    report["mean_retention_probability"] = ret_sum / n
    report["mean_engagement_reward"] = eng_sum / n
    report["mean_format_action_reward"] = fmt_a_sum / n
    report["mean_format_relevance_reward"] = fmt_r_sum / n
    report["mean_composite_reward"] = comp_sum / n
    return report


def evaluate_policy(
    policy: FusionPolicy,
    reward_model: RewardModelParams | None,
    env: SearchEnvironment,
    entries: Sequence[PoolEntry],
    reward_cfg: RewardConfig,
    rng: SeededRng,
) -> dict:
    """Greedy-action evaluation over a held-out pool; deterministic given
    (params, pool, rng)."""

    def choose(entry: PoolEntry):
        output = policy.forward(np.asarray(entry.state_features, dtype=np.float64))
        action = policy.greedy_action(output)
        return action.weights, format_action_reward(action, reward_cfg.feasibility_tolerance)

    return _evaluate_rankings(env, entries, choose, reward_model, reward_cfg, rng)


def evaluate_fixed_weights(
    weights: Sequence[float],
    reward_model: RewardModelParams | None,
    env: SearchEnvironment,
    entries: Sequence[PoolEntry],
    reward_cfg: RewardConfig,
    rng: SeededRng,
) -> dict:
    """Evaluation of a static weight vector (the uniform baseline uses 1/k)."""
    total = float(sum(weights))
    fmt_a = 0.0 if abs(total - 1.0) <= reward_cfg.feasibility_tolerance else -1.0

    def choose(entry: PoolEntry):
        return tuple(weights), fmt_a

    return _evaluate_rankings(env, entries, choose, reward_model, reward_cfg, rng)


@dataclass(frozen=True)
class AlphaPoint:
    alpha: float
    corr_gap: float | None
    corr_retention: float | None
    composite: float | None
    valid: bool

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "corr_gap": self.corr_gap,
            "corr_retention": self.corr_retention,
            "composite": self.composite,
            "valid": self.valid,
        }


@dataclass(frozen=True)
class AlphaSweepResult:
    points: tuple[AlphaPoint, ...]
    best_alpha: float | None


def alpha_sensitivity(
    episodes: Sequence[QueryEpisode], alphas: Sequence[float], cfg: SatConfig
) -> AlphaSweepResult:
    """Correlation of the satisfaction reward with its two constituents.

    For each alpha in the grid (endpoints 0 and 1 are allowed here even
    though training configs keep alpha interior), computes Pearson
    correlations of r_sat against the decayed gap score and against the
    retention bit, plus their sum as a composite alignment score. Grid
    points where either series has zero variance are flagged invalid and
    excluded from the argmax.
    """
    if len(episodes) < 2:
        raise ValueError("need at least two episodes")
    gaps = np.asarray(
        [
            gap_score(ep.session_gap, ep.user_gap_baseline, cfg.stability_delta, cfg.temperature)
            for ep in episodes
        ]
    )
    retained = np.asarray([float(ep.retained) for ep in episodes])
    keep = np.asarray([1.0 - float(ep.reformulated) for ep in episodes])
    points = []
    best_alpha = None
    best_composite = -math.inf
    for alpha in alphas:
        r = keep * (alpha * gaps + (1.0 - alpha) * retained)
        try:
            corr_gap = pearson(r, gaps)
            corr_ret = pearson(r, retained)
        except ValueError:
            points.append(AlphaPoint(float(alpha), None, None, None, valid=False))
            continue
        composite = corr_gap + corr_ret
        points.append(AlphaPoint(float(alpha), corr_gap, corr_ret, composite, valid=True))
        if composite > best_composite:
            best_composite = composite
            best_alpha = float(alpha)
    return AlphaSweepResult(points=tuple(points), best_alpha=best_alpha)


def report_text(report: dict) -> str:
    """Aligned two-column rendering of a {metric: value} report."""
    width = max(len(k) for k in report)
    lines = []
    for key in report:
        value = report[key]
        shown = f"{value:.6f}" if isinstance(value, float) else str(value)
        lines.append(f"{key.ljust(width)}  {shown}")
    return "\n".join(lines) + "\n"
