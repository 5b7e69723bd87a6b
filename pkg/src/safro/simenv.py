"""Deterministic synthetic short-video search environment.

Stands in for production logs with known ground truth. Every candidate
carries latent (relevance, quality) in [0, 1]; per-task prediction scores
are noisy increasing functions of task-specific mixtures of those latents,
scaled per task to exercise the log transform in the fusion score. Feedback
for any ranking follows a position-biased examination model, and query
outcomes (reformulation, session gap, retention) are driven by the realized
top-list utility U = mean of relevance * quality over the top positions.
Everything is a pure function of (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    Candidate,
    ItemFeedback,
    QueryEpisode,
    ScoreVector,
    SeededRng,
    read_episodes_jsonl,
    write_episodes_jsonl,
)
from .fusion import RankedList, rank
from .satisfaction import gap_baseline


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


@dataclass(frozen=True)
class EnvConfig:
    user_count: int = 50
    queries_per_user: int = 50
    candidates_per_query: int = 20
    task_count: int = 4
    score_scales: tuple[float, ...] = (0.5, 4.0, 40.0, 1.5)
    score_noise: float = 0.3
    click_floor: float = 0.05
    longplay_base: float = 0.15
    duration_scale: float = 40.0
    duration_noise: float = 0.4
    reform_steepness: float = 6.0
    utility_threshold: float = 0.22
    gap_sensitivity: float = 3.0
    gap_noise: float = 0.4
    retention_base: float = -0.8
    retention_user_spread: float = 0.3
    retention_sensitivity: float = 5.0
    retention_activity_weight: float = 1.5
    gap_log_mean: float = 5.0
    gap_log_sigma: float = 0.7
    gap_activity_pull: float = 1.5
    gap_history_length: int = 30
    gap_quantile: float = 0.6
    utility_top_k: int = 10
    quality_heterogeneity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.user_count < 1 or self.queries_per_user < 1:
            raise ValueError("user_count and queries_per_user must be >= 1")
        if self.candidates_per_query < 2:
            raise ValueError("candidates_per_query must be >= 2")
        if self.task_count < 2:
            raise ValueError(f"task_count must be >= 2, got {self.task_count!r}")
        if len(self.score_scales) != self.task_count:
            raise ValueError(
                f"score_scales needs {self.task_count} entries, got {len(self.score_scales)}"
            )
        if any(s <= 0.0 for s in self.score_scales):
            raise ValueError("score_scales must be > 0")
        if self.score_noise < 0.0 or self.duration_noise < 0.0 or self.gap_noise < 0.0:
            raise ValueError("noise levels must be >= 0")
        if not 0.0 <= self.click_floor < 1.0:
            raise ValueError(f"click_floor must be in [0, 1), got {self.click_floor!r}")
        if not 0.0 <= self.longplay_base < 1.0:
            raise ValueError(f"longplay_base must be in [0, 1), got {self.longplay_base!r}")
        for name in ("reform_steepness", "gap_sensitivity", "retention_sensitivity"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.gap_history_length < 10:
            raise ValueError("gap_history_length must be >= 10")
        if not 0.0 < self.gap_quantile < 1.0:
            raise ValueError(f"gap_quantile must be in (0, 1), got {self.gap_quantile!r}")
        if self.utility_top_k < 1:
            raise ValueError("utility_top_k must be >= 1")
        if not 0.0 <= self.quality_heterogeneity <= 1.0:
            raise ValueError("quality_heterogeneity must be in [0, 1]")
        object.__setattr__(self, "score_scales", tuple(float(s) for s in self.score_scales))

    @property
    def feature_dim(self) -> int:
        return 2 + 2 * self.task_count

    def to_dict(self) -> dict:
        return {
            "user_count": self.user_count,
            "queries_per_user": self.queries_per_user,
            "candidates_per_query": self.candidates_per_query,
            "task_count": self.task_count,
            "score_scales": list(self.score_scales),
            "score_noise": self.score_noise,
            "click_floor": self.click_floor,
            "longplay_base": self.longplay_base,
            "duration_scale": self.duration_scale,
            "duration_noise": self.duration_noise,
            "reform_steepness": self.reform_steepness,
            "utility_threshold": self.utility_threshold,
            "gap_sensitivity": self.gap_sensitivity,
            "gap_noise": self.gap_noise,
            "retention_base": self.retention_base,
            "retention_user_spread": self.retention_user_spread,
            "retention_sensitivity": self.retention_sensitivity,
            "retention_activity_weight": self.retention_activity_weight,
            "gap_log_mean": self.gap_log_mean,
            "gap_log_sigma": self.gap_log_sigma,
            "gap_activity_pull": self.gap_activity_pull,
            "gap_history_length": self.gap_history_length,
            "gap_quantile": self.gap_quantile,
            "utility_top_k": self.utility_top_k,
            "quality_heterogeneity": self.quality_heterogeneity,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        if "score_scales" in d:
            d["score_scales"] = tuple(d["score_scales"])
        return cls(**d)


@dataclass(frozen=True)
class UserProfile:
    """Latent user state: activity drives base gap lengths and retention."""

    activity: float
    gap_history: tuple[float, ...]
    gap_baseline: float
    retention_base: float

    def __post_init__(self):
        if not 0.0 < self.activity <= 1.0:
            raise ValueError(f"activity must be in (0, 1], got {self.activity!r}")
        if len(self.gap_history) < 10:
            raise ValueError("gap history must hold at least 10 entries")
        if not self.gap_baseline > 0.0:
            raise ValueError("gap baseline must be > 0")


@dataclass(frozen=True)
class PoolEntry:
    """One query state: the user, encoded features, and scored candidates."""

    user: UserProfile
    state_features: tuple[float, ...]
    candidates: tuple[Candidate, ...]


@dataclass(frozen=True)
class Outcomes:
    reformulated: int
    session_gap: float
    retained: int
    retention_probability: float


@dataclass(frozen=True)
class LoggedEpisode:
    """A realized episode plus the future engagement evidence used as
    confidence weights when fitting the reward model."""

    episode: QueryEpisode
    future_clicks: int
    future_long_plays: int


# Task j mixes latents as (1 - lam_j) * quality + lam_j * relevance with
# lam_j evenly spaced from 0 (pure quality) to 1 (pure relevance).
def task_mixtures(task_count: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, task_count)


class SearchEnvironment:
    """Pure episode generation and counterfactual feedback realization."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self._root = SeededRng(cfg.seed).split("simenv")
        self._pool: list[PoolEntry] | None = None

    # -- generation ----------------------------------------------------------

    def _generate_user(self, user_idx: int) -> UserProfile:
        cfg = self.cfg
        gen = self._root.split(f"user-{user_idx}").generator
        activity = float(gen.uniform(0.2, 1.0))
        log_mu = cfg.gap_log_mean - cfg.gap_activity_pull * activity
        history = np.exp(gen.normal(log_mu, cfg.gap_log_sigma, size=cfg.gap_history_length))
        baseline = gap_baseline(history, cfg.gap_quantile)
        retention_base = cfg.retention_base + float(
            gen.uniform(-cfg.retention_user_spread, cfg.retention_user_spread)
        )
        return UserProfile(
            activity=activity,
            gap_history=tuple(float(g) for g in history),
            gap_baseline=baseline,
            retention_base=retention_base,
        )

    def _generate_query(self, user: UserProfile, user_idx: int, query_idx: int) -> PoolEntry:
        cfg = self.cfg
        gen = self._root.split(f"query-{user_idx}-{query_idx}").generator
        difficulty = float(gen.uniform(0.0, 1.0))
        # Heterogeneity shrinks the latent ceiling on hard queries so whole
        # query groups differ in achievable quality.
        ceiling = 1.0 - cfg.quality_heterogeneity * difficulty
        n = cfg.candidates_per_query
        relevance = gen.uniform(0.0, ceiling, size=n)
        quality = gen.uniform(0.0, ceiling, size=n)
        lam = task_mixtures(cfg.task_count)
        drivers = (1.0 - lam[None, :]) * quality[:, None] + lam[None, :] * relevance[:, None]
        noise = np.exp(cfg.score_noise * gen.normal(size=(n, cfg.task_count)))
        scores = np.asarray(cfg.score_scales)[None, :] * drivers * noise
        candidates = tuple(
            Candidate(
                scores=ScoreVector(tuple(scores[i])),
                relevance=float(relevance[i]),
                quality=float(quality[i]),
            )
            for i in range(n)
        )
        log_scores = np.log1p(scores)
        feats = [user.activity, difficulty]
        feats.extend(log_scores.mean(axis=0).tolist())
        feats.extend(log_scores.max(axis=0).tolist())
        return PoolEntry(
            user=user, state_features=tuple(float(f) for f in feats), candidates=candidates
        )

    def episode_pool(self) -> list[PoolEntry]:
        """All (user, query) states, fully determined by (config, seed)."""
        if self._pool is None:
            pool = []
            for u in range(self.cfg.user_count):
                user = self._generate_user(u)
                for q in range(self.cfg.queries_per_user):
                    pool.append(self._generate_query(user, u, q))
            self._pool = pool
        return self._pool

    # -- realization ---------------------------------------------------------

    def realize_feedback(
        self, entry: PoolEntry, ranking: RankedList, rng: SeededRng
    ) -> tuple[ItemFeedback, ...]:
        """Per-item feedback for one displayed ranking.

        Examination decays with rank as 1/log2(pos + 1); clicks mix latent
        quality and relevance above a floor; long-plays and durations are
        conditional on a click and grow with quality. The returned tuple is
        aligned with the entry's candidate indices.
        """
        cfg = self.cfg
        n = len(entry.candidates)
        if sorted(ranking.order) != list(range(n)):
            raise ValueError("ranking does not permute this entry's candidates")
        gen = rng.generator
        feedback: list[ItemFeedback | None] = [None] * n
        for pos, idx in enumerate(ranking.order):
            cand = entry.candidates[idx]
            exam = 1.0 / math.log2(pos + 2)
            p_click = exam * (
                cfg.click_floor
                + (1.0 - cfg.click_floor) * (0.5 * cand.quality + 0.5 * cand.relevance)
            )
            click = int(gen.random() < p_click)
            long_play = 0
            duration = 0.0
            if click:
                p_lp = cfg.longplay_base + (1.0 - cfg.longplay_base) * cand.quality
                long_play = int(gen.random() < p_lp)
                duration = (
                    cfg.duration_scale
                    * (0.1 + 0.9 * cand.quality)
                    * (1.0 + 0.5 * long_play)
                    * math.exp(cfg.duration_noise * gen.normal())
                )
            feedback[idx] = ItemFeedback(
                click=click,
                long_play=long_play,
                duration=duration,
                relevance_label=cand.relevance,
            )
        return tuple(feedback)  # type: ignore[arg-type]

    def list_utility(self, entry: PoolEntry, ranking: RankedList) -> float:
        """Mean of relevance * quality over the top displayed positions."""
        depth = min(self.cfg.utility_top_k, len(ranking))
        vals = [
            entry.candidates[ranking.order[p]].relevance
            * entry.candidates[ranking.order[p]].quality
            for p in range(depth)
        ]
        return float(np.mean(vals))

    def realize_outcomes(
        self,
        entry: PoolEntry,
        ranking: RankedList,
        feedback: Sequence[ItemFeedback],
        rng: SeededRng,
    ) -> Outcomes:
        """Query-level outcomes driven by the realized top-list utility."""
        cfg = self.cfg
        if len(feedback) != len(entry.candidates):
            raise ValueError("feedback must align with the entry's candidates")
        gen = rng.generator
        utility = self.list_utility(entry, ranking)
        margin = utility - cfg.utility_threshold
        p_reform = _sigmoid(cfg.reform_steepness * -margin)
        reformulated = int(gen.random() < p_reform)
        session_gap = (
            entry.user.gap_baseline
            * math.exp(-cfg.gap_sensitivity * margin)
            * math.exp(cfg.gap_noise * gen.normal())
        )
        # Active users both retain more and return faster, the confounding
        # the personal gap baseline corrects for.
        p_ret = _sigmoid(
            entry.user.retention_base
            + cfg.retention_sensitivity * utility
            + cfg.retention_activity_weight * (entry.user.activity - 0.5)
        )
        retained = int(gen.random() < p_ret)
        return Outcomes(
            reformulated=reformulated,
            session_gap=float(session_gap),
            retained=retained,
            retention_probability=p_ret,
        )

    def logged_episode(
        self, entry: PoolEntry, weights: Sequence[float], rng: SeededRng
    ) -> LoggedEpisode:
        """Realize one episode under a logging weight vector.

        Candidates and feedback are stored in display order. Future
        engagement counts grow with user activity and realized utility,
        giving satisfied sessions stronger behavioral evidence.
        """
        scores = [c.scores for c in entry.candidates]
        ranking = rank(scores, weights)
        feedback = self.realize_feedback(entry, ranking, rng.split("feedback"))
        outcomes = self.realize_outcomes(entry, ranking, feedback, rng.split("outcomes"))
        utility = self.list_utility(entry, ranking)
        gen = rng.split("future").generator
        rate = entry.user.activity * (0.25 + utility)
        future_clicks = int(gen.poisson(5.0 * rate))
        future_long_plays = int(gen.poisson(3.0 * rate))
        order = ranking.order
        episode = QueryEpisode(
            state_features=entry.state_features,
            candidates=tuple(entry.candidates[i] for i in order),
            feedback=tuple(feedback[i] for i in order),
            reformulated=outcomes.reformulated,
            session_gap=outcomes.session_gap,
            retained=outcomes.retained,
            user_gap_baseline=entry.user.gap_baseline,
        )
        return LoggedEpisode(
            episode=episode,
            future_clicks=future_clicks,
            future_long_plays=future_long_plays,
        )

    def log_pool(
        self, weights: Sequence[float], rng: SeededRng, entries: Sequence[PoolEntry] | None = None
    ) -> list[LoggedEpisode]:
        if entries is None:
            entries = self.episode_pool()
        return [
            self.logged_episode(entry, weights, rng.split(f"episode-{i}"))
            for i, entry in enumerate(entries)
        ]


def write_logged_jsonl(path: str | Path, logged: Iterable[LoggedEpisode]) -> None:
    logged = list(logged)
    write_episodes_jsonl(
        path,
        [l.episode for l in logged],
        extras=[
            {"future_clicks": l.future_clicks, "future_long_plays": l.future_long_plays}
            for l in logged
        ],
    )


def read_logged_jsonl(path: str | Path) -> list[LoggedEpisode]:
    out = []
    for episode, extra in read_episodes_jsonl(path):
        out.append(
            LoggedEpisode(
                episode=episode,
                future_clicks=int(extra.get("future_clicks", 0)),
                future_long_plays=int(extra.get("future_long_plays", 0)),
            )
        )
    return out
