"""Experiment configuration: schema, defaults, validation, dotted overrides.

Config files are JSON with one section per subsystem. Command-line
overrides address single leaves with dotted paths (for example
`drpo.group_size=8`); values parse as JSON literals. Defaults follow the
reported optima where the method states them (group size 32, entropy
coefficient 0.05, alpha 0.5, gap quantile 0.6); everything else is an
artifact default documented here.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .drpo import DrpoConfig
from .fusion import ActionSpace
from .policy import PolicyConfig
from .reward import RewardConfig
from .satisfaction import RewardModelHyper, SatConfig
from .simenv import EnvConfig


class ConfigError(ValueError):
    """A config field failed validation; the message names the field."""


@dataclass(frozen=True)
class FusionSpaceConfig:
    """Shape of the discretized weight space shared by policy and rewards."""

    num_bins: int = 6
    weight_min: float = 0.0
    weight_max: float = 1.0
    tolerance: float = 0.01

    def __post_init__(self):
        if self.num_bins < 1:
            raise ValueError(f"num_bins must be >= 1, got {self.num_bins!r}")
        if not self.tolerance > 0.0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance!r}")
        if self.weight_min >= self.weight_max:
            raise ValueError("weight_min must be below weight_max")

    def to_dict(self) -> dict:
        return {
            "num_bins": self.num_bins,
            "weight_min": self.weight_min,
            "weight_max": self.weight_max,
            "tolerance": self.tolerance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusionSpaceConfig":
        return cls(**d)

    def build(self, num_tasks: int) -> ActionSpace:
        return ActionSpace.uniform(
            num_tasks=num_tasks,
            num_bins=self.num_bins,
            weight_min=self.weight_min,
            weight_max=self.weight_max,
            tolerance=self.tolerance,
        )


@dataclass(frozen=True)
class PolicyNetConfig:
    """Network sizes; task count and bins come from env and fusion sections."""

    hidden_width: int = 32
    encoder_layers: int = 2
    relation_dim: int = 8
    use_task_relations: bool = True
    hard_feasible: bool = False

    def __post_init__(self):
        if self.hidden_width < 1 or self.encoder_layers < 1 or self.relation_dim < 1:
            raise ValueError("network sizes must be >= 1")

    def to_dict(self) -> dict:
        return {
            "hidden_width": self.hidden_width,
            "encoder_layers": self.encoder_layers,
            "relation_dim": self.relation_dim,
            "use_task_relations": self.use_task_relations,
            "hard_feasible": self.hard_feasible,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyNetConfig":
        return cls(**d)

    def build(self, feature_dim: int, num_tasks: int, num_bins: int) -> PolicyConfig:
        return PolicyConfig(
            num_tasks=num_tasks,
            num_bins=num_bins,
            feature_dim=feature_dim,
            hidden_width=self.hidden_width,
            encoder_layers=self.encoder_layers,
            relation_dim=self.relation_dim,
            use_task_relations=self.use_task_relations,
            hard_feasible=self.hard_feasible,
        )


@dataclass(frozen=True)
class EvalConfig:
    heldout_count: int = 500

    def __post_init__(self):
        if self.heldout_count < 1:
            raise ValueError(f"heldout_count must be >= 1, got {self.heldout_count!r}")

    def to_dict(self) -> dict:
        return {"heldout_count": self.heldout_count}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig
    fusion: FusionSpaceConfig
    sat: SatConfig
    reward_model: RewardModelHyper
    reward: RewardConfig
    policy: PolicyNetConfig
    drpo: DrpoConfig
    evaluation: EvalConfig

    def to_dict(self) -> dict:
        return {
            "env": self.env.to_dict(),
            "fusion": self.fusion.to_dict(),
            "sat": self.sat.to_dict(),
            "reward_model": self.reward_model.to_dict(),
            "reward": self.reward.to_dict(),
            "policy": self.policy.to_dict(),
            "drpo": self.drpo.to_dict(),
            "evaluation": self.evaluation.to_dict(),
        }

    def action_space(self) -> ActionSpace:
        return self.fusion.build(self.env.task_count)

    def policy_config(self) -> PolicyConfig:
        return self.policy.build(
            feature_dim=self.env.feature_dim,
            num_tasks=self.env.task_count,
            num_bins=self.fusion.num_bins,
        )


_SECTIONS = {
    "env": EnvConfig,
    "fusion": FusionSpaceConfig,
    "sat": SatConfig,
    "reward_model": RewardModelHyper,
    "reward": RewardConfig,
    "policy": PolicyNetConfig,
    "drpo": DrpoConfig,
    "evaluation": EvalConfig,
}


def default_config_dict() -> dict:
    return ExperimentConfig(
        env=EnvConfig(),
        fusion=FusionSpaceConfig(),
        sat=SatConfig(),
        reward_model=RewardModelHyper(),
        reward=RewardConfig(),
        policy=PolicyNetConfig(),
        drpo=DrpoConfig(),
        evaluation=EvalConfig(),
    ).to_dict()


def _deep_merge(base: dict, update: dict, path: str = "") -> dict:
    merged = dict(base)
    for key, value in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config field {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a section, got {value!r}")
            merged[key] = _deep_merge(base[key], value, where)
        else:
            merged[key] = value
    return merged


def apply_override(config: dict, dotted: str) -> None:
    """Set one leaf in place from a 'section.field=json_value' string."""
    if "=" not in dotted:
        raise ConfigError(f"override {dotted!r} must look like section.field=value")
    path, raw = dotted.split("=", 1)
    keys = path.strip().split(".")
    node: Any = config
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"unknown config path {path!r}")
        node = node[key]
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config path {path!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings pass through
    node[leaf] = value


def build_config(config_dict: dict) -> ExperimentConfig:
    """Validate and freeze a config dict into typed sections.

    Range violations surface as ConfigError naming the offending section,
    before any computation runs.
    """
    sections = {}
    for name, cls in _SECTIONS.items():
        payload = config_dict.get(name, {})
        try:
            sections[name] = cls.from_dict(payload)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config section {name!r}: {exc}") from exc
    cfg = ExperimentConfig(**sections)
    total = cfg.env.user_count * cfg.env.queries_per_user
    if cfg.evaluation.heldout_count >= total:
        raise ConfigError(
            "evaluation.heldout_count must leave at least one training episode "
            f"(pool has {total})"
        )
    return cfg


def load_config(
    path: str | Path | None = None,
    overrides: Sequence[str] = (),
    seed: int | None = None,
) -> tuple[ExperimentConfig, dict]:
    """Resolve defaults, an optional JSON file, overrides, and a seed flag.

    Returns both the typed config and the fully resolved dict (the dict is
    what run manifests embed, so a run is reproducible from its manifest).
    """
    merged = default_config_dict()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        merged = _deep_merge(merged, user)
    for item in overrides:
        apply_override(merged, item)
    if seed is not None:
        merged["env"]["seed"] = int(seed)
    return build_config(merged), merged


def config_hash(config_dict: dict) -> str:
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
