"""Dual-relative advantage estimation and the clipped-surrogate trainer.

For a batch of query groups, rewards are normalized twice: within each
group (how an action compares to its peers under the same query) and
across group means (how the whole query ranks inside the batch):

    A_group[i, g] = (r[i, g] - mean_i) / std_i
    C[i]          = (mean_i - batch_mean) / batch_std
    A_dual[i, g]  = A_group[i, g] + C[i]

Both normalizations use the population standard deviation and map
degenerate (below-floor) spreads to zero. Adding the group-constant C
preserves every within-group advantage difference exactly while shifting
whole groups up or down by their quality, and the batch total stays zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import FusionAction, SeededRng
from .policy import FusionPolicy, PolicyGrads, apply_gradient_step

ADVANTAGE_MODES = ("dual", "group_only")


class TrainingDivergedError(RuntimeError):
    """Parameters became non-finite during a policy update."""


class RolloutEnv(Protocol):
    """What the trainer needs from an environment handle."""

    def num_states(self) -> int: ...

    def state_features(self, index: int) -> np.ndarray: ...

    def score(self, index: int, action: FusionAction, rng: SeededRng) -> float: ...


@dataclass(frozen=True)
class DrpoConfig:
    group_size: int = 32
    batch_size: int = 16
    clip_epsilon: float = 0.2
    entropy_coef: float = 0.05
    epochs_per_batch: int = 2
    learning_rate: float = 0.15
    momentum: float = 0.0
    std_floor: float = 1e-8
    advantage_mode: str = "dual"
    iterations: int = 200
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size!r}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size!r}")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError(f"clip_epsilon must be in (0, 1), got {self.clip_epsilon!r}")
        if self.entropy_coef < 0.0:
            raise ValueError(f"entropy_coef must be >= 0, got {self.entropy_coef!r}")
        if self.epochs_per_batch < 1:
            raise ValueError(f"epochs_per_batch must be >= 1, got {self.epochs_per_batch!r}")
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if not self.std_floor > 0.0:
            raise ValueError(f"std_floor must be > 0, got {self.std_floor!r}")
        if self.advantage_mode not in ADVANTAGE_MODES:
            raise ValueError(
                f"advantage_mode must be one of {ADVANTAGE_MODES}, got {self.advantage_mode!r}"
            )
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations!r}")

    def to_dict(self) -> dict:
        return {
            "group_size": self.group_size,
            "batch_size": self.batch_size,
            "clip_epsilon": self.clip_epsilon,
            "entropy_coef": self.entropy_coef,
            "epochs_per_batch": self.epochs_per_batch,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "std_floor": self.std_floor,
            "advantage_mode": self.advantage_mode,
            "iterations": self.iterations,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DrpoConfig":
        return cls(**d)


@dataclass(frozen=True)
class AdvantageBatch:
    rewards: np.ndarray  # (B, G)
    group_means: np.ndarray  # (B,)
    group_stds: np.ndarray  # (B,)
    batch_mean: float
    batch_std: float
    group_advantages: np.ndarray  # (B, G)
    batch_shifts: np.ndarray  # (B,)
    dual_advantages: np.ndarray  # (B, G)


def group_advantage(
    rewards: Sequence[float], std_floor: float = 1e-8
) -> tuple[np.ndarray, float, float]:
    """Normalize one group's rewards by their population mean and std.

    A spread below `std_floor` gives all-zero advantages instead of a
    division blow-up.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.shape[0] < 2:
        raise ValueError("a group needs at least two rewards")
    mean = float(r.mean())
    std = float(np.sqrt(((r - mean) ** 2).mean()))
    if std < std_floor:
        return np.zeros_like(r), mean, std
    return (r - mean) / std, mean, std


def batch_shift(
    group_means: Sequence[float], std_floor: float = 1e-8
) -> tuple[np.ndarray, float, float]:
    """Position each group's mean inside the batch of group means."""
    m = np.asarray(group_means, dtype=np.float64)
    if m.ndim != 1 or m.shape[0] < 2:
        raise ValueError("a batch needs at least two groups")
    mean = float(m.mean())
    std = float(np.sqrt(((m - mean) ** 2).mean()))
    if std < std_floor:
        return np.zeros_like(m), mean, std
    return (m - mean) / std, mean, std


def dual_advantage(rewards: np.ndarray, cfg: DrpoConfig) -> AdvantageBatch:
    """Group advantages plus batch shifts for a (batch, group) reward matrix.

    In group_only mode the shifts are forced to zero, which reproduces plain
    group-relative normalization.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 2:
        raise ValueError(f"rewards must be a (batch, group) matrix, got shape {r.shape}")
    if r.shape[0] != cfg.batch_size or r.shape[1] != cfg.group_size:
        raise ValueError(
            f"rewards shape {r.shape} does not match config "
            f"({cfg.batch_size}, {cfg.group_size})"
        )
    group_adv = np.zeros_like(r)
    means = np.zeros(r.shape[0])
    stds = np.zeros(r.shape[0])
    for i in range(r.shape[0]):
        group_adv[i], means[i], stds[i] = group_advantage(r[i], cfg.std_floor)
    shifts, batch_mean, batch_std = batch_shift(means, cfg.std_floor)
    if cfg.advantage_mode == "group_only":
        shifts = np.zeros_like(shifts)
    dual = group_adv + shifts[:, None]
    return AdvantageBatch(
        rewards=r,
        group_means=means,
        group_stds=stds,
        batch_mean=batch_mean,
        batch_std=batch_std,
        group_advantages=group_adv,
        batch_shifts=shifts,
        dual_advantages=dual,
    )


def surrogate_objective(
    new_log_probs: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    entropies: np.ndarray,
    cfg: DrpoConfig,
) -> tuple[float, np.ndarray, dict]:
    """Clipped surrogate with entropy bonus, and its per-sample gradient.

    Returns (objective, d(objective)/d(new_log_prob) per sample, stats).
    The derivative is zero wherever the clipped branch is active, since
    that branch is constant in the ratio.
    """
    new_lp = np.asarray(new_log_probs, dtype=np.float64)
    old_lp = np.asarray(old_log_probs, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    ent = np.asarray(entropies, dtype=np.float64)
    if new_lp.shape != old_lp.shape or new_lp.shape != adv.shape:
        raise ValueError("log-prob and advantage shapes must align")
    for name, arr in (("new_log_probs", new_lp), ("old_log_probs", old_lp),
                      ("advantages", adv), ("entropies", ent)):
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in {name}")
    ratio = np.exp(new_lp - old_lp)
    clipped_ratio = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)
    unclipped = ratio * adv
    clipped = clipped_ratio * adv
    per_sample = np.minimum(unclipped, clipped)
    n_samples = per_sample.size
    surrogate = float(per_sample.mean())
    entropy_bonus = cfg.entropy_coef * float(ent.mean())
    objective = surrogate + entropy_bonus
    unclipped_active = unclipped <= clipped
    dcoef = np.where(unclipped_active, unclipped, 0.0) / n_samples
    stats = {
        "clip_fraction": float(np.mean(~unclipped_active)),
        "mean_ratio": float(ratio.mean()),
        "surrogate": surrogate,
        "entropy_bonus": entropy_bonus,
    }
    return objective, dcoef, stats


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    mean_reward: float
    mean_entropy: float
    clip_fraction: float
    mean_abs_shift: float
    objective: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "mean_reward": self.mean_reward,
            "mean_entropy": self.mean_entropy,
            "clip_fraction": self.clip_fraction,
            "mean_abs_shift": self.mean_abs_shift,
            "objective": self.objective,
        }


def train(
    env: RolloutEnv,
    policy: FusionPolicy,
    cfg: DrpoConfig,
    rng: SeededRng,
    iterations: int | None = None,
    trace_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
) -> tuple[FusionPolicy, list[IterationMetrics]]:
    """On-policy training: one rollout batch per snapshot, several surrogate
    epochs per batch.

    Per iteration: draw batch_size query states, sample group_size actions
    per state from the snapshot policy, score composite rewards through the
    environment handle, normalize to dual advantages, then ascend the
    clipped surrogate for epochs_per_batch epochs. Metrics report the final
    epoch of each iteration (at the first epoch every ratio is exactly 1).
    """
    if iterations is None:
        iterations = cfg.iterations
    n_states = env.num_states()
    if n_states < 1:
        raise ValueError("environment has no states")
    metrics: list[IterationMetrics] = []
    trace_fh = None
    if trace_path is not None:
        trace_fh = Path(trace_path).open("w", encoding="utf-8")
    velocity: PolicyGrads | None = None
    try:
        for it in range(iterations):
            it_rng = rng.split(f"iter-{it}")
            gen = it_rng.split("states").generator
            replace_draw = n_states < cfg.batch_size
            idx = gen.choice(n_states, size=cfg.batch_size, replace=replace_draw)

            old_params = policy.params.copy()
            old_policy = FusionPolicy(policy.config, policy.space, params=old_params)
            states = [np.asarray(env.state_features(int(i)), dtype=np.float64) for i in idx]
            actions: list[list[FusionAction]] = []
            old_lp = np.zeros((cfg.batch_size, cfg.group_size))
            rewards = np.zeros((cfg.batch_size, cfg.group_size))
            for i, state in enumerate(states):
                out = old_policy.forward(state)
                sample_rng = it_rng.split(f"sample-{i}")
                row: list[FusionAction] = []
                for g in range(cfg.group_size):
                    action, lp = old_policy.sample_action(out, sample_rng.split(str(g)))
                    row.append(action)
                    old_lp[i, g] = lp
                    rewards[i, g] = env.score(
                        int(idx[i]), action, it_rng.split(f"reward-{i}-{g}")
                    )
                actions.append(row)

            adv = dual_advantage(rewards, cfg)
            last_stats: dict = {}
            last_objective = 0.0
            mean_entropy = 0.0
            for _ in range(cfg.epochs_per_batch):
                new_lp = np.zeros_like(old_lp)
                entropies = np.zeros(cfg.batch_size)
                outputs = []
                for i, state in enumerate(states):
                    out = policy.forward(state)
                    outputs.append(out)
                    entropies[i] = policy.entropy(out)
                    for g, action in enumerate(actions[i]):
                        new_lp[i, g] = policy.log_prob(out, action)
                objective, dcoef, stats = surrogate_objective(
                    new_lp, old_lp, adv.dual_advantages, entropies, cfg
                )
                grads: PolicyGrads | None = None
                for i, state in enumerate(states):
                    g = policy.backward_batch(
                        state,
                        actions[i],
                        dcoef[i],
                        cfg.entropy_coef / cfg.batch_size,
                    )
                    if grads is None:
                        grads = g
                    else:
                        grads.add(g)
                velocity = apply_gradient_step(
                    policy.params, grads, cfg.learning_rate, velocity, cfg.momentum
                )
                if not policy.params.all_finite():
                    if checkpoint_dir is not None:
                        policy.save(Path(checkpoint_dir) / f"diverged_iter{it}.bin")
                    raise TrainingDivergedError(
                        f"non-finite parameters after iteration {it}"
                    )
                last_stats = stats
                last_objective = objective
                mean_entropy = float(entropies.mean())

            row = IterationMetrics(
                iteration=it,
                mean_reward=float(rewards.mean()),
                mean_entropy=mean_entropy,
                clip_fraction=last_stats["clip_fraction"],
                mean_abs_shift=float(np.abs(adv.batch_shifts).mean()),
                objective=last_objective,
            )
            metrics.append(row)
            if trace_fh is not None:
                trace_fh.write(json.dumps(row.to_dict(), sort_keys=True) + "\n")
            if (
                checkpoint_dir is not None
                and cfg.checkpoint_every > 0
                and (it + 1) % cfg.checkpoint_every == 0
            ):
                policy.save(Path(checkpoint_dir) / f"policy_iter{it + 1:05d}.bin")
    finally:
        if trace_fh is not None:
            trace_fh.close()
    return policy, metrics
