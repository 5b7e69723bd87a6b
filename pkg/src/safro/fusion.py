"""Fusion scoring, ranking, and the discretized weight action space.

The fused score of an item is sum_j w_j * ln(1 + s_j). The log transform
tames scale disparities across objectives, and because any fixed log base
only rescales all weights uniformly, natural log is used throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import FusionAction, ScoreVector

DEFAULT_ENUMERATION_CAP = 10_000_000


@dataclass(frozen=True)
class ActionSpace:
    """Per-task weight bins with a feasibility tolerance on the weight sum.

    All tasks share the same bin count B so that per-task logit vectors in
    the policy have equal length.
    """

    bins: tuple[tuple[float, ...], ...]
    tolerance: float
    bounds: tuple[tuple[float, float], ...]

    def __post_init__(self):
        bins = tuple(tuple(float(v) for v in task_bins) for task_bins in self.bins)
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if not bins:
            raise ValueError("action space needs at least one task")
        if len(bounds) != len(bins):
            raise ValueError("bounds must align with per-task bins")
        counts = {len(b) for b in bins}
        if len(counts) != 1:
            raise ValueError(f"all tasks must share one bin count, got {sorted(counts)}")
        if 0 in counts:
            raise ValueError("each task needs at least one bin")
        tol = float(self.tolerance)
        if not tol > 0.0:
            raise ValueError(f"tolerance must be > 0, got {tol!r}")
        for j, (task_bins, (lo, hi)) in enumerate(zip(bins, bounds)):
            if lo > hi:
                raise ValueError(f"task {j}: lower bound {lo} exceeds upper bound {hi}")
            if any(b0 >= b1 for b0, b1 in zip(task_bins, task_bins[1:])):
                raise ValueError(f"task {j}: bin values must be strictly ascending")
            if task_bins[0] < lo or task_bins[-1] > hi:
                raise ValueError(f"task {j}: bins must lie within [{lo}, {hi}]")
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "tolerance", tol)

    @property
    def num_tasks(self) -> int:
        return len(self.bins)

    @property
    def num_bins(self) -> int:
        return len(self.bins[0])

    @classmethod
    def uniform(
        cls,
        num_tasks: int,
        num_bins: int,
        weight_min: float = 0.0,
        weight_max: float = 1.0,
        tolerance: float = 0.01,
    ) -> "ActionSpace":
        """Evenly spaced bins over the same [weight_min, weight_max] per task."""
        if num_bins < 1:
            raise ValueError("num_bins must be >= 1")
        if num_bins == 1:
            values = (float(weight_max),)
        else:
            values = tuple(np.linspace(weight_min, weight_max, num_bins).tolist())
        return cls(
            bins=tuple(values for _ in range(num_tasks)),
            tolerance=tolerance,
            bounds=tuple((float(weight_min), float(weight_max)) for _ in range(num_tasks)),
        )

    def action_from_bins(self, bin_indices: Sequence[int]) -> FusionAction:
        if len(bin_indices) != self.num_tasks:
            raise ValueError(
                f"expected {self.num_tasks} bin indices, got {len(bin_indices)}"
            )
        for j, b in enumerate(bin_indices):
            if not 0 <= b < self.num_bins:
                raise ValueError(f"task {j}: bin index {b} outside [0, {self.num_bins})")
        return FusionAction(
            bin_indices=tuple(int(b) for b in bin_indices),
            weights=tuple(self.bins[j][b] for j, b in enumerate(bin_indices)),
        )

    def to_dict(self) -> dict:
        return {
            "bins": [list(b) for b in self.bins],
            "tolerance": self.tolerance,
            "bounds": [list(b) for b in self.bounds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSpace":
        return cls(
            bins=tuple(tuple(b) for b in d["bins"]),
            tolerance=d["tolerance"],
            bounds=tuple((lo, hi) for lo, hi in d["bounds"]),
        )


@dataclass(frozen=True)
class RankedList:
    """A permutation of candidate indices sorted by descending fused score.

    `fused_scores[i]` is the score of the i-th *candidate* (original index),
    not of position i; ties are broken by ascending candidate index.
    """

    order: tuple[int, ...]
    fused_scores: tuple[float, ...]

    def __post_init__(self):
        order = tuple(int(i) for i in self.order)
        scores = tuple(float(s) for s in self.fused_scores)
        if sorted(order) != list(range(len(scores))):
            raise ValueError("order must be a permutation of candidate indices")
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "fused_scores", scores)

    def __len__(self) -> int:
        return len(self.order)


def fuse_score(scores: ScoreVector, weights: Sequence[float]) -> float:
    """Weighted sum of log1p-transformed objective scores."""
    if len(scores) != len(weights):
        raise ValueError(
            f"score vector has {len(scores)} components but got {len(weights)} weights"
        )
    total = 0.0
    for s, w in zip(scores.values, weights):
        if s < 0.0:
            raise ValueError(f"score components must be >= 0, got {s!r}")
        total += float(w) * math.log1p(s)
    return total


def rank(candidates: Sequence[ScoreVector], weights: Sequence[float]) -> RankedList:
    """Sort candidates by descending fused score, ties by ascending index."""
    if not candidates:
        raise ValueError("cannot rank an empty candidate list")
    fused = [fuse_score(c, weights) for c in candidates]
    order = sorted(range(len(fused)), key=lambda i: (-fused[i], i))
    return RankedList(order=tuple(order), fused_scores=tuple(fused))


def is_feasible(action: FusionAction, tolerance: float) -> bool:
    """Whether the action's weights sum to 1 within the tolerance (inclusive)."""
    return abs(action.weight_sum - 1.0) <= tolerance


def enumerate_feasible(
    space: ActionSpace, cap: int = DEFAULT_ENUMERATION_CAP
) -> list[FusionAction]:
    """All feasible actions in lexicographic bin-index order.

    Walks the full Cartesian product, so the grid size B^k must not exceed
    `cap`.
    """
    total = space.num_bins**space.num_tasks
    if total > cap:
        raise ValueError(f"action grid size {total} exceeds enumeration cap {cap}")
    feasible = []
    for combo in itertools.product(range(space.num_bins), repeat=space.num_tasks):
        action = space.action_from_bins(combo)
        if is_feasible(action, space.tolerance):
            feasible.append(action)
    return feasible
