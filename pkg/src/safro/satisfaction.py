"""Query-level satisfaction reward and the list-level reward model.

The satisfaction reward gates on query reformulation (a reformulated query
earns zero), then mixes an exponentially decayed session gap, normalized by
the user's personal gap-quantile baseline, with next-day retention. A small
feed-forward regressor is trained on logged episodes with confidence-
weighted MSE so the policy can score counterfactual rankings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .core import Candidate, ItemFeedback, QueryEpisode, SeededRng
from .fusion import fuse_score
from .nets import Layers, init_mlp, mlp_backward, mlp_forward

# Per-position features are taken from this many top ranks; shorter lists
# are zero-padded.
LIST_FEATURE_POSITIONS = 10
LIST_FEATURE_DIM = 2 * LIST_FEATURE_POSITIONS + 3


@dataclass(frozen=True)
class SatConfig:
    """Hyperparameters of the satisfaction reward.

    `gap_quantile` is the personal-baseline quantile (written beta_q to keep
    it apart from the entropy coefficient beta_h used in policy training).
    """

    gap_quantile: float = 0.6
    stability_delta: float = 30.0
    temperature: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.gap_quantile < 1.0:
            raise ValueError(f"gap_quantile must be in (0, 1), got {self.gap_quantile!r}")
        if not self.stability_delta > 0.0:
            raise ValueError(f"stability_delta must be > 0, got {self.stability_delta!r}")
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be > 0, got {self.temperature!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha!r}")

    def to_dict(self) -> dict:
        return {
            "gap_quantile": self.gap_quantile,
            "stability_delta": self.stability_delta,
            "temperature": self.temperature,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SatConfig":
        return cls(**d)


def gap_baseline(historical_gaps: Sequence[float], quantile: float) -> float:
    """Empirical quantile of a user's historical session gaps.

    Linear interpolation between order statistics.
    """
    if len(historical_gaps) == 0:
        raise ValueError("gap history must be non-empty")
    return float(np.quantile(np.asarray(historical_gaps, dtype=np.float64), quantile))


def gap_score(session_gap: float, baseline: float, delta: float, temperature: float) -> float:
    """Exponentially decayed session gap, normalized by the user baseline.

    Depends on its inputs only through session_gap / ((baseline + delta) * T).
    """
    if not delta > 0.0:
        raise ValueError(f"delta must be > 0, got {delta!r}")
    if not temperature > 0.0:
        raise ValueError(f"temperature must be > 0, got {temperature!r}")
    if session_gap < 0.0:
        raise ValueError(f"session_gap must be >= 0, got {session_gap!r}")
    if not baseline > 0.0:
        raise ValueError(f"baseline must be > 0, got {baseline!r}")
    return math.exp(-session_gap / ((baseline + delta) * temperature))


def r_sat(episode: QueryEpisode, cfg: SatConfig) -> float:
    """Bounded satisfaction reward in [0, 1] for one logged episode.

    Reformulated queries signal failed intent fulfillment and earn exactly
    zero; otherwise the decayed gap score and the retention bit are mixed
    by alpha.
    """
    if episode.reformulated:
        return 0.0
    g = gap_score(
        episode.session_gap,
        episode.user_gap_baseline,
        cfg.stability_delta,
        cfg.temperature,
    )
    return cfg.alpha * g + (1.0 - cfg.alpha) * float(episode.retained)


def confidence(episode: QueryEpisode, future_clicks: int, future_long_plays: int) -> float:
    """Log-damped evidence weight from engagement after the episode.

    Zero future evidence yields zero weight, so the sample drops out of the
    reward-model objective.
    """
    if future_clicks < 0 or future_long_plays < 0:
        raise ValueError("future engagement counts must be >= 0")
    return math.log1p(future_clicks + future_long_plays)


# ---------------------------------------------------------------------------
# Reward model
# ---------------------------------------------------------------------------


@dataclass
class RewardModelParams:
    """Feed-forward regressor weights; the scalar output is clamped to [0, 1].

    Inputs are standardized by the stored per-feature mean and std (fitted
    on the training set) so raw outputs start inside the clamp interval and
    keep their gradients.
    """

    layers: Layers
    feature_mean: np.ndarray
    feature_std: np.ndarray

    def copy(self) -> "RewardModelParams":
        return RewardModelParams(
            layers=[(w.copy(), b.copy()) for w, b in self.layers],
            feature_mean=self.feature_mean.copy(),
            feature_std=self.feature_std.copy(),
        )

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.feature_mean) / self.feature_std

    def __eq__(self, other) -> bool:
        if not isinstance(other, RewardModelParams):
            return NotImplemented
        return (
            len(self.layers) == len(other.layers)
            and all(
                np.array_equal(aw, bw) and np.array_equal(ab, bb)
                for (aw, ab), (bw, bb) in zip(self.layers, other.layers)
            )
            and np.array_equal(self.feature_mean, other.feature_mean)
            and np.array_equal(self.feature_std, other.feature_std)
        )


@dataclass(frozen=True)
class RewardModelHyper:
    hidden_size: int = 32
    learning_rate: float = 0.1
    epochs: int = 80
    batch_size: int = 64

    def __post_init__(self):
        if self.hidden_size < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("hidden_size, epochs, and batch_size must be >= 1")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate!r}")

    def to_dict(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardModelHyper":
        return cls(**d)


def list_features(
    candidates: Sequence[Candidate],
    feedback: Sequence[ItemFeedback],
    order: Sequence[int] | None = None,
) -> np.ndarray:
    """Fixed-schema summary of a ranked list.

    Per displayed position (top LIST_FEATURE_POSITIONS): the relevance label
    and log1p of the first score component as a click-likelihood proxy.
    Then mean and max fused score under uniform weights as order-free pool
    strength, and the raw list length. `order` defaults to stored order.
    """
    n = len(candidates)
    if len(feedback) != n:
        raise ValueError("feedback must align with candidates")
    if order is None:
        order = range(n)
    k = len(candidates[0].scores)
    uniform = [1.0 / k] * k
    fused = [fuse_score(c.scores, uniform) for c in candidates]
    feats = np.zeros(LIST_FEATURE_DIM, dtype=np.float64)
    for pos, idx in enumerate(order):
        if pos >= LIST_FEATURE_POSITIONS:
            break
        feats[2 * pos] = feedback[idx].relevance_label
        feats[2 * pos + 1] = math.log1p(candidates[idx].scores.values[0])
    feats[-3] = float(np.mean(fused))
    feats[-2] = float(np.max(fused))
    feats[-1] = float(n)
    return feats


def episode_features(episode: QueryEpisode) -> tuple[np.ndarray, np.ndarray]:
    """(query context, list features) for a logged episode in display order."""
    return (
        np.asarray(episode.state_features, dtype=np.float64),
        list_features(episode.candidates, episode.feedback),
    )


def init_reward_model(
    context_dim: int, hyper: RewardModelHyper, rng: SeededRng
) -> RewardModelParams:
    dims = [context_dim + LIST_FEATURE_DIM, hyper.hidden_size, 1]
    layers = init_mlp(rng.generator, dims)
    layers[-1][1][:] = 0.5  # start raw outputs inside the clamp interval
    return RewardModelParams(
        layers=layers,
        feature_mean=np.zeros(dims[0]),
        feature_std=np.ones(dims[0]),
    )


def predict_satisfaction(
    params: RewardModelParams, query_context: np.ndarray, list_feats: np.ndarray
) -> float:
    """Clamped scalar satisfaction prediction for one (context, list) pair."""
    x = np.concatenate([np.asarray(query_context, float), np.asarray(list_feats, float)])
    if x.shape[0] != params.input_dim:
        raise ValueError(
            f"feature dimension {x.shape[0]} does not match model input {params.input_dim}"
        )
    out, _ = mlp_forward(params.layers, params.normalize(x))
    return float(min(1.0, max(0.0, out[0])))


def weighted_mse_and_grads(
    params: RewardModelParams, x: np.ndarray, targets: np.ndarray, conf: np.ndarray
) -> tuple[float, Layers]:
    """Confidence-weighted MSE over clamped predictions, with exact gradients.

    The clamp contributes identity derivative on the closed interval [0, 1]
    and zero outside, so saturated samples stop pulling on the weights.
    """
    total_conf = float(conf.sum())
    if not total_conf > 0.0:
        raise ValueError("total confidence must be > 0")
    raw, cache = mlp_forward(params.layers, x)
    raw = raw[:, 0]
    pred = np.clip(raw, 0.0, 1.0)
    resid = pred - targets
    loss = float(np.sum(conf * resid**2) / total_conf)
    mask = (raw >= 0.0) & (raw <= 1.0)
    dpred = (2.0 * conf * resid * mask / total_conf)[:, None]
    grads, _ = mlp_backward(params.layers, cache, dpred)
    return loss, grads


def train_reward_model(
    dataset: Sequence[tuple[QueryEpisode, float, float]],
    hyper: RewardModelHyper,
    rng: SeededRng,
) -> tuple[RewardModelParams, list[float]]:
    """Fit the reward model by mini-batch gradient descent.

    Each dataset row is (episode, satisfaction target, confidence weight).
    Rows with zero confidence contribute nothing; a dataset whose weights
    sum to zero is rejected before any training step. Returns the final
    parameters and the full-dataset loss after each epoch.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    conf = np.asarray([c for _, _, c in dataset], dtype=np.float64)
    if np.any(conf < 0.0):
        raise ValueError("confidence weights must be >= 0")
    if not conf.sum() > 0.0:
        raise ValueError("total confidence is zero; nothing to fit")
    targets = np.asarray([t for _, t, _ in dataset], dtype=np.float64)
    rows = [np.concatenate(episode_features(ep)) for ep, _, _ in dataset]
    raw_x = np.stack(rows)

    params = init_reward_model(
        raw_x.shape[1] - LIST_FEATURE_DIM, hyper, rng.split("init")
    )
    params.feature_mean = raw_x.mean(axis=0)
    std = raw_x.std(axis=0)
    params.feature_std = np.where(std < 1e-8, 1.0, std)
    x = params.normalize(raw_x)
    shuffle_gen = rng.split("shuffle").generator
    n = x.shape[0]
    trace: list[float] = []
    for _ in range(hyper.epochs):
        perm = shuffle_gen.permutation(n)
        for start in range(0, n, hyper.batch_size):
            sel = perm[start : start + hyper.batch_size]
            if not conf[sel].sum() > 0.0:
                continue
            _, grads = weighted_mse_and_grads(params, x[sel], targets[sel], conf[sel])
            for (w, b), (gw, gb) in zip(params.layers, grads):
                w -= hyper.learning_rate * gw
                b -= hyper.learning_rate * gb
        loss, _ = weighted_mse_and_grads(params, x, targets, conf)
        trace.append(loss)
    return params, trace


def save_reward_model(
    path: str | Path, params: RewardModelParams, cfg: SatConfig, hyper: RewardModelHyper
) -> None:
    """Binary weights plus a JSON sidecar recording the satisfaction config."""
    path = Path(path)
    tensors: list[np.ndarray] = []
    for w, b in params.layers:
        tensors.extend((w, b))
    tensors.append(params.feature_mean)
    tensors.append(params.feature_std)
    checkpoint.save_tensors(path, tensors)
    checkpoint.save_sidecar(
        path.with_suffix(".json"),
        {
            "sat_config": cfg.to_dict(),
            "hyper": hyper.to_dict(),
            "layer_count": len(params.layers),
        },
    )


def load_reward_model(path: str | Path) -> tuple[RewardModelParams, SatConfig, RewardModelHyper]:
    path = Path(path)
    tensors = checkpoint.load_tensors(path)
    sidecar = checkpoint.load_sidecar(path.with_suffix(".json"))
    n_layers = int(sidecar["layer_count"])
    layers = [(tensors[2 * i], tensors[2 * i + 1]) for i in range(n_layers)]
    return (
        RewardModelParams(
            layers=layers,
            feature_mean=tensors[2 * n_layers],
            feature_std=tensors[2 * n_layers + 1],
        ),
        SatConfig.from_dict(sidecar["sat_config"]),
        RewardModelHyper.from_dict(sidecar["hyper"]),
    )
