"""Shared domain types, deterministic RNG substreams, and JSONL persistence.

Every value type here is immutable after construction and compares
structurally. One global seed fans out into named substreams so that a
single component (environment, policy init, sampling) can be varied while
everything else stays fixed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

_UINT64 = 2**64


def _as_uint64(value: int) -> int:
    return int(value) % _UINT64


@dataclass(frozen=True, eq=True)
class SeededRng:
    """A deterministic random stream identified by (seed, stream).

    The same pair yields the same draw sequence on every platform and run.
    Instances are single-owner: drawing from `generator` mutates internal
    state, so never share one across workers; call `split` instead.
    """

    seed: int
    stream: int = 0

    @cached_property
    def generator(self) -> np.random.Generator:
        return np.random.default_rng([_as_uint64(self.seed), _as_uint64(self.stream)])

    def split(self, label: str) -> "SeededRng":
        return split_rng(self, label)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "stream": self.stream}

    @classmethod
    def from_dict(cls, d: dict) -> "SeededRng":
        return cls(seed=int(d["seed"]), stream=int(d.get("stream", 0)))


def split_rng(parent: SeededRng, label: str) -> SeededRng:
    """Derive an independent substream of `parent` addressed by `label`.

    The child stream id is a 64-bit hash of (seed, parent stream, label), so
    the same (parent, label) always names the same substream while distinct
    labels, seeds, or parent streams give unrelated sequences.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(_as_uint64(parent.seed).to_bytes(8, "little"))
    h.update(_as_uint64(parent.stream).to_bytes(8, "little"))
    h.update(label.encode("utf-8"))
    return SeededRng(seed=parent.seed, stream=int.from_bytes(h.digest(), "little"))


def _check_unit(name: str, value: float) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0.0 or value > 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return value


def _check_flag(name: str, value: int) -> int:
    value = int(value)
    if value not in (0, 1):
        raise ValueError(f"{name} must be 0 or 1, got {value!r}")
    return value


@dataclass(frozen=True)
class ScoreVector:
    """Non-negative per-objective prediction scores for one candidate item."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("ScoreVector needs at least one component")
        for v in vals:
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"score components must be finite and >= 0, got {v!r}")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"values": list(self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreVector":
        return cls(values=tuple(d["values"]))


@dataclass(frozen=True)
class FusionAction:
    """One discrete weight vector: per-task bin choices and their values."""

    bin_indices: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.bin_indices)
        w = tuple(float(v) for v in self.weights)
        if len(idx) != len(w):
            raise ValueError("bin_indices and weights must have equal length")
        if any(i < 0 for i in idx):
            raise ValueError("bin indices must be non-negative")
        object.__setattr__(self, "bin_indices", idx)
        object.__setattr__(self, "weights", w)

    @property
    def weight_sum(self) -> float:
        return float(sum(self.weights))

    def to_dict(self) -> dict:
        return {"bin_indices": list(self.bin_indices), "weights": list(self.weights)}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionAction":
        return cls(bin_indices=tuple(d["bin_indices"]), weights=tuple(d["weights"]))


@dataclass(frozen=True)
class Candidate:
    """One retrieved item: model scores plus the latent truth behind them."""

    scores: ScoreVector
    relevance: float
    quality: float

    def __post_init__(self):
        object.__setattr__(self, "relevance", _check_unit("relevance", self.relevance))
        object.__setattr__(self, "quality", _check_unit("quality", self.quality))

    def to_dict(self) -> dict:
        return {
            "scores": list(self.scores.values),
            "relevance": self.relevance,
            "quality": self.quality,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        return cls(
            scores=ScoreVector(tuple(d["scores"])),
            relevance=d["relevance"],
            quality=d["quality"],
        )


@dataclass(frozen=True)
class ItemFeedback:
    """Observed interaction signals for one displayed item."""

    click: int
    long_play: int
    duration: float
    relevance_label: float

    def __post_init__(self):
        object.__setattr__(self, "click", _check_flag("click", self.click))
        object.__setattr__(self, "long_play", _check_flag("long_play", self.long_play))
        dur = float(self.duration)
        if not np.isfinite(dur) or dur < 0.0:
            raise ValueError(f"duration must be finite and >= 0, got {dur!r}")
        object.__setattr__(self, "duration", dur)
        object.__setattr__(
            self, "relevance_label", _check_unit("relevance_label", self.relevance_label)
        )

    def to_dict(self) -> dict:
        return {
            "click": self.click,
            "long_play": self.long_play,
            "duration": self.duration,
            "relevance_label": self.relevance_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ItemFeedback":
        return cls(
            click=d["click"],
            long_play=d["long_play"],
            duration=d["duration"],
            relevance_label=d["relevance_label"],
        )


@dataclass(frozen=True)
class QueryEpisode:
    """One logged query: state, displayed candidates, feedback, and outcomes.

    Candidates are stored in display order, and feedback[i] belongs to
    candidates[i].
    """

    state_features: tuple[float, ...]
    candidates: tuple[Candidate, ...]
    feedback: tuple[ItemFeedback, ...]
    reformulated: int
    session_gap: float
    retained: int
    user_gap_baseline: float

    def __post_init__(self):
        object.__setattr__(
            self, "state_features", tuple(float(v) for v in self.state_features)
        )
        cands = tuple(self.candidates)
        fb = tuple(self.feedback)
        if not cands:
            raise ValueError("episode needs at least one candidate")
        if len(fb) != len(cands):
            raise ValueError(
                f"feedback length {len(fb)} does not match {len(cands)} candidates"
            )
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "feedback", fb)
        object.__setattr__(self, "reformulated", _check_flag("reformulated", self.reformulated))
        object.__setattr__(self, "retained", _check_flag("retained", self.retained))
        gap = float(self.session_gap)
        base = float(self.user_gap_baseline)
        if not gap > 0.0:
            raise ValueError(f"session_gap must be > 0, got {gap!r}")
        if not base > 0.0:
            raise ValueError(f"user_gap_baseline must be > 0, got {base!r}")
        object.__setattr__(self, "session_gap", gap)
        object.__setattr__(self, "user_gap_baseline", base)

    def to_dict(self) -> dict:
        return {
            "state_features": list(self.state_features),
            "candidates": [c.to_dict() for c in self.candidates],
            "feedback": [f.to_dict() for f in self.feedback],
            "reformulated": self.reformulated,
            "session_gap": self.session_gap,
            "retained": self.retained,
            "user_gap_baseline": self.user_gap_baseline,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QueryEpisode":
        return cls(
            state_features=tuple(d["state_features"]),
            candidates=tuple(Candidate.from_dict(c) for c in d["candidates"]),
            feedback=tuple(ItemFeedback.from_dict(f) for f in d["feedback"]),
            reformulated=d["reformulated"],
            session_gap=d["session_gap"],
            retained=d["retained"],
            user_gap_baseline=d["user_gap_baseline"],
        )


def write_episodes_jsonl(
    path: str | Path,
    episodes: Iterable[QueryEpisode],
    extras: Sequence[dict] | None = None,
) -> None:
    """Persist episodes one JSON object per line.

    `extras`, when given, supplies additional per-line keys (for example
    future engagement counts riding along with a training log); extra keys
    must not collide with episode field names.
    """
    episodes = list(episodes)
    if extras is not None and len(extras) != len(episodes):
        raise ValueError("extras must align one-to-one with episodes")
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for i, ep in enumerate(episodes):
            row = ep.to_dict()
            if extras is not None:
                for key, value in extras[i].items():
                    if key in row:
                        raise ValueError(f"extra key {key!r} collides with an episode field")
                    row[key] = value
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_episodes_jsonl(path: str | Path) -> Iterator[tuple[QueryEpisode, dict]]:
    """Yield (episode, extra-keys dict) per line; unknown keys are preserved."""
    episode_fields = {f.name for f in fields(QueryEpisode)}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            extra = {k: v for k, v in row.items() if k not in episode_fields}
            yield QueryEpisode.from_dict(row), extra
