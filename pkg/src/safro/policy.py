"""Task-relation-aware fusion policy over discretized weight vectors.

An MLP encoder maps state features to a hidden vector h. Per-task linear
heads produce base bin-logit vectors z_i; learned projections u_i = h W_u_i
give pairwise interaction scores e_ij = <u_i, u_j>, whose row softmax mixes
the base logit vectors. A per-task scalar gate in (0, 1) adds a gated
residual:

    z_tilde_i = gate_i * z_i + sum_j softmax_j(e_ij) * z_j

Each task's bin distribution is softmax(z_tilde_i). By default actions are
sampled per task independently and weight-sum feasibility is enforced by
the format reward; a hard mode renormalizes the joint distribution over the
enumerated feasible set instead. Gradients are exact and hand-written.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import checkpoint
from .core import FusionAction, SeededRng
from .fusion import ActionSpace, enumerate_feasible
from .nets import (
    Layers,
    add_layer_grads,
    init_linear,
    init_mlp,
    mlp_backward,
    mlp_forward,
    zeros_like_layers,
)


class NonFiniteOutputError(RuntimeError):
    """A forward pass produced a non-finite intermediate value."""

    def __init__(self, location: str):
        super().__init__(f"non-finite values in {location}")
        self.location = location


@dataclass(frozen=True)
class PolicyConfig:
    num_tasks: int
    num_bins: int
    feature_dim: int
    hidden_width: int = 32
    encoder_layers: int = 2
    relation_dim: int = 8
    use_task_relations: bool = True
    hard_feasible: bool = False

    def __post_init__(self):
        if self.num_tasks < 1 or self.num_bins < 1:
            raise ValueError("num_tasks and num_bins must be >= 1")
        if self.feature_dim < 1 or self.hidden_width < 1:
            raise ValueError("feature_dim and hidden_width must be >= 1")
        if self.encoder_layers < 1:
            raise ValueError("encoder_layers must be >= 1")
        if self.relation_dim < 1:
            raise ValueError("relation_dim must be >= 1")

    def to_dict(self) -> dict:
        return {
            "num_tasks": self.num_tasks,
            "num_bins": self.num_bins,
            "feature_dim": self.feature_dim,
            "hidden_width": self.hidden_width,
            "encoder_layers": self.encoder_layers,
            "relation_dim": self.relation_dim,
            "use_task_relations": self.use_task_relations,
            "hard_feasible": self.hard_feasible,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(**d)


@dataclass
class PolicyParams:
    """All learnable tensors; shapes fixed by the policy config."""

    encoder: Layers
    head_w: np.ndarray  # (k, d_h, B)
    head_b: np.ndarray  # (k, B)
    relation_w: np.ndarray  # (k, d_h, d)
    gate_w: np.ndarray  # (k, d_h)
    gate_b: np.ndarray  # (k,)

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            encoder=[(w.copy(), b.copy()) for w, b in self.encoder],
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            relation_w=self.relation_w.copy(),
            gate_w=self.gate_w.copy(),
            gate_b=self.gate_b.copy(),
        )

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, (w, b) in enumerate(self.encoder):
            yield f"encoder.{i}.w", w
            yield f"encoder.{i}.b", b
        yield "head_w", self.head_w
        yield "head_b", self.head_b
        yield "relation_w", self.relation_w
        yield "gate_w", self.gate_w
        yield "gate_b", self.gate_b

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for _, t in self.named_tensors())


@dataclass
class PolicyGrads:
    encoder: Layers
    head_w: np.ndarray
    head_b: np.ndarray
    relation_w: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> "PolicyGrads":
        return cls(
            encoder=zeros_like_layers(params.encoder),
            head_w=np.zeros_like(params.head_w),
            head_b=np.zeros_like(params.head_b),
            relation_w=np.zeros_like(params.relation_w),
            gate_w=np.zeros_like(params.gate_w),
            gate_b=np.zeros_like(params.gate_b),
        )

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for i, (w, b) in enumerate(self.encoder):
            yield f"encoder.{i}.w", w
            yield f"encoder.{i}.b", b
        yield "head_w", self.head_w
        yield "head_b", self.head_b
        yield "relation_w", self.relation_w
        yield "gate_w", self.gate_w
        yield "gate_b", self.gate_b

    def add(self, other: "PolicyGrads", scale: float = 1.0) -> None:
        add_layer_grads(self.encoder, other.encoder, scale)
        self.head_w += scale * other.head_w
        self.head_b += scale * other.head_b
        self.relation_w += scale * other.relation_w
        self.gate_w += scale * other.gate_w
        self.gate_b += scale * other.gate_b

    def scale(self, factor: float) -> None:
        for _, t in self.named_tensors():
            t *= factor


@dataclass(frozen=True)
class PolicyOutput:
    """Refined logits, per-task bin distributions, attention, and gates."""

    refined_logits: np.ndarray  # (k, B)
    distributions: np.ndarray  # (k, B), rows sum to 1
    attention: np.ndarray  # (k, k), row-stochastic
    gates: np.ndarray  # (k,)


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _logsumexp(x: np.ndarray) -> float:
    m = float(x.max())
    return m + float(np.log(np.exp(x - m).sum()))


@dataclass
class _ForwardCache:
    x: np.ndarray
    enc_cache: object
    h: np.ndarray
    base_logits: np.ndarray
    u: np.ndarray | None
    gate_pre: np.ndarray | None
    output: PolicyOutput


class FusionPolicy:
    """Policy network plus the action space that resolves bins to weights."""

    def __init__(
        self,
        config: PolicyConfig,
        space: ActionSpace,
        params: PolicyParams | None = None,
        rng: SeededRng | None = None,
    ):
        if space.num_tasks != config.num_tasks or space.num_bins != config.num_bins:
            raise ValueError("action space does not match policy config")
        self.config = config
        self.space = space
        if params is None:
            if rng is None:
                raise ValueError("either params or rng must be given")
            params = self.init_params(rng)
        self.params = params
        self._feasible: list[FusionAction] | None = None
        self._feasible_bins: np.ndarray | None = None

    def init_params(self, rng: SeededRng) -> PolicyParams:
        cfg = self.config
        dims = [cfg.feature_dim] + [cfg.hidden_width] * cfg.encoder_layers
        encoder = init_mlp(rng.split("encoder").generator, dims)
        head_gen = rng.split("heads").generator
        head = [init_linear(head_gen, cfg.hidden_width, cfg.num_bins) for _ in range(cfg.num_tasks)]
        rel_gen = rng.split("relations").generator
        bound = 1.0 / np.sqrt(cfg.hidden_width)
        relation_w = rel_gen.uniform(
            -bound, bound, size=(cfg.num_tasks, cfg.hidden_width, cfg.relation_dim)
        )
        gate_gen = rng.split("gates").generator
        gate_w = gate_gen.uniform(-bound, bound, size=(cfg.num_tasks, cfg.hidden_width))
        gate_b = gate_gen.uniform(-bound, bound, size=cfg.num_tasks)
        return PolicyParams(
            encoder=encoder,
            head_w=np.stack([w for w, _ in head]),
            head_b=np.stack([b for _, b in head]),
            relation_w=relation_w,
            gate_w=gate_w,
            gate_b=gate_b,
        )

    # -- forward -----------------------------------------------------------

    def _forward_cache(self, state_features: np.ndarray) -> _ForwardCache:
        cfg = self.config
        x = np.asarray(state_features, dtype=np.float64)
        if x.shape != (cfg.feature_dim,):
            raise ValueError(
                f"expected state features of shape ({cfg.feature_dim},), got {x.shape}"
            )
        h, enc_cache = mlp_forward(self.params.encoder, x, relu_last=True)
        if not np.all(np.isfinite(h)):
            raise NonFiniteOutputError("encoder output")
        z = np.einsum("khb,h->kb", self.params.head_w, h) + self.params.head_b
        if not np.all(np.isfinite(z)):
            raise NonFiniteOutputError("base logit heads")
        if cfg.use_task_relations:
            u = np.einsum("khd,h->kd", self.params.relation_w, h)
            e = u @ u.T
            if not np.all(np.isfinite(e)):
                raise NonFiniteOutputError("task interaction scores")
            att = _softmax_rows(e)
            gate_pre = self.params.gate_w @ h + self.params.gate_b
            gates = 1.0 / (1.0 + np.exp(-gate_pre))
            z_t = gates[:, None] * z + att @ z
        else:
            u = None
            gate_pre = None
            att = np.eye(cfg.num_tasks)
            gates = np.zeros(cfg.num_tasks)
            z_t = z
        if not np.all(np.isfinite(z_t)):
            raise NonFiniteOutputError("refined logits")
        pi = _softmax_rows(z_t)
        output = PolicyOutput(
            refined_logits=z_t, distributions=pi, attention=att, gates=gates
        )
        return _ForwardCache(
            x=x, enc_cache=enc_cache, h=h, base_logits=z, u=u, gate_pre=gate_pre, output=output
        )

    def forward(self, state_features: np.ndarray) -> PolicyOutput:
        return self._forward_cache(state_features).output

    # -- feasible-set helpers (hard mode) -----------------------------------

    def _feasible_table(self) -> np.ndarray:
        if self._feasible_bins is None:
            self._feasible = enumerate_feasible(self.space)
            if not self._feasible:
                raise ValueError("feasible action set is empty; widen bins or tolerance")
            self._feasible_bins = np.asarray(
                [a.bin_indices for a in self._feasible], dtype=np.intp
            )
        return self._feasible_bins

    def _joint_feasible_logprobs(self, output: PolicyOutput) -> np.ndarray:
        table = self._feasible_table()
        logp = _log_softmax_rows(output.refined_logits)
        scores = logp[np.arange(self.config.num_tasks)[None, :], table].sum(axis=1)
        return scores - _logsumexp(scores)

    # -- distribution interface ---------------------------------------------

    def sample_action(
        self, output: PolicyOutput, rng: SeededRng
    ) -> tuple[FusionAction, float]:
        gen = rng.generator
        if self.config.hard_feasible:
            logp = self._joint_feasible_logprobs(output)
            idx = int(gen.choice(len(logp), p=np.exp(logp)))
            action = self._feasible[idx]
            return action, float(logp[idx])
        bins = []
        for i in range(self.config.num_tasks):
            bins.append(int(gen.choice(self.config.num_bins, p=output.distributions[i])))
        action = self.space.action_from_bins(bins)
        return action, self.log_prob(output, action)

    def greedy_action(self, output: PolicyOutput) -> FusionAction:
        """Mode of the policy: argmax bin per task (argmax over the feasible
        joint in hard mode)."""
        if self.config.hard_feasible:
            logp = self._joint_feasible_logprobs(output)
            return self._feasible[int(np.argmax(logp))]
        return self.space.action_from_bins(
            [int(np.argmax(output.distributions[i])) for i in range(self.config.num_tasks)]
        )

    def log_prob(self, output: PolicyOutput, action: FusionAction) -> float:
        idx = np.asarray(action.bin_indices, dtype=np.intp)
        if idx.shape[0] != self.config.num_tasks or np.any(idx >= self.config.num_bins):
            raise ValueError(f"action bins {action.bin_indices} outside the policy grid")
        if self.config.hard_feasible:
            table = self._feasible_table()
            matches = np.nonzero((table == idx[None, :]).all(axis=1))[0]
            if matches.size == 0:
                raise ValueError(f"action {action.bin_indices} is not feasible")
            return float(self._joint_feasible_logprobs(output)[int(matches[0])])
        logp = _log_softmax_rows(output.refined_logits)
        return float(logp[np.arange(self.config.num_tasks), idx].sum())

    def entropy(self, output: PolicyOutput) -> float:
        """Joint action entropy; the per-task sum in factorized mode."""
        if self.config.hard_feasible:
            logp = self._joint_feasible_logprobs(output)
            return float(-(np.exp(logp) * logp).sum())
        logp = _log_softmax_rows(output.refined_logits)
        pi = output.distributions
        return float(-(pi * logp).sum())

    # -- backward ------------------------------------------------------------

    def _dlogits_log_prob(self, output: PolicyOutput, action: FusionAction) -> np.ndarray:
        idx = np.asarray(action.bin_indices, dtype=np.intp)
        if self.config.hard_feasible:
            table = self._feasible_table()
            logp = self._joint_feasible_logprobs(output)
            p = np.exp(logp)
            marginals = np.zeros_like(output.distributions)
            for i in range(self.config.num_tasks):
                np.add.at(marginals[i], table[:, i], p)
            g = -marginals
            g[np.arange(self.config.num_tasks), idx] += 1.0
            return g
        g = -output.distributions.copy()
        g[np.arange(self.config.num_tasks), idx] += 1.0
        return g

    def _dlogits_entropy(self, output: PolicyOutput) -> np.ndarray:
        if self.config.hard_feasible:
            table = self._feasible_table()
            logp = self._joint_feasible_logprobs(output)
            p = np.exp(logp)
            plogp = p * logp
            s0 = float(plogp.sum())
            marginals = np.zeros_like(output.distributions)
            s1 = np.zeros_like(output.distributions)
            for i in range(self.config.num_tasks):
                np.add.at(marginals[i], table[:, i], p)
                np.add.at(s1[i], table[:, i], plogp)
            return -(s1 - marginals * s0)
        logp = _log_softmax_rows(output.refined_logits)
        pi = output.distributions
        row_entropy = -(pi * logp).sum(axis=1, keepdims=True)
        return -pi * (logp + row_entropy)

    def _backward_from_logits(self, cache: _ForwardCache, g: np.ndarray) -> PolicyGrads:
        """Propagate d(objective)/d(refined logits) to every parameter."""
        cfg = self.config
        params = self.params
        z = cache.base_logits
        att = cache.output.attention
        gates = cache.output.gates
        h = cache.h
        grads = PolicyGrads.zeros_like(params)

        if cfg.use_task_relations:
            dz = gates[:, None] * g + att.T @ g
            dgates = (g * z).sum(axis=1)
            datt = g @ z.T
            de = att * (datt - (att * datt).sum(axis=1, keepdims=True))
            du = (de + de.T) @ cache.u
            grads.relation_w = np.einsum("h,kd->khd", h, du)
            dh = np.einsum("khd,kd->h", params.relation_w, du)
            dgate_pre = dgates * gates * (1.0 - gates)
            grads.gate_w = dgate_pre[:, None] * h[None, :]
            grads.gate_b = dgate_pre
            dh = dh + dgate_pre @ params.gate_w
        else:
            dz = g
            dh = np.zeros_like(h)

        grads.head_w = np.einsum("h,kb->khb", h, dz)
        grads.head_b = dz
        dh = dh + np.einsum("khb,kb->h", params.head_w, dz)
        enc_grads, _ = mlp_backward(params.encoder, cache.enc_cache, dh, relu_last=True)
        grads.encoder = enc_grads
        return grads

    def backward(
        self,
        state_features: np.ndarray,
        action: FusionAction,
        logprob_coef: float,
        entropy_coef: float,
    ) -> PolicyGrads:
        """Exact gradient of logprob_coef * log pi(action) + entropy_coef * H."""
        return self.backward_batch(state_features, [action], [logprob_coef], entropy_coef)

    def backward_batch(
        self,
        state_features: np.ndarray,
        actions: Sequence[FusionAction],
        logprob_coefs: Sequence[float],
        entropy_coef: float,
    ) -> PolicyGrads:
        """Gradient of sum_g coef_g * log pi(a_g) + entropy_coef * H for one
        state, in a single propagation."""
        if len(actions) != len(logprob_coefs):
            raise ValueError("actions and coefficients must align")
        cache = self._forward_cache(state_features)
        g = np.zeros_like(cache.output.refined_logits)
        for action, coef in zip(actions, logprob_coefs):
            if coef != 0.0:
                g += coef * self._dlogits_log_prob(cache.output, action)
        if entropy_coef != 0.0:
            g += entropy_coef * self._dlogits_entropy(cache.output)
        return self._backward_from_logits(cache, g)

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tensors: list[np.ndarray] = []
        for _, t in self.params.named_tensors():
            tensors.append(t)
        checkpoint.save_tensors(path, tensors)
        checkpoint.save_sidecar(
            path.with_suffix(".json"),
            {"policy_config": self.config.to_dict(), "action_space": self.space.to_dict()},
        )

    @classmethod
    def load(cls, path: str | Path) -> "FusionPolicy":
        path = Path(path)
        sidecar = checkpoint.load_sidecar(path.with_suffix(".json"))
        config = PolicyConfig.from_dict(sidecar["policy_config"])
        space = ActionSpace.from_dict(sidecar["action_space"])
        tensors = checkpoint.load_tensors(path)
        n_enc = config.encoder_layers
        encoder = [(tensors[2 * i], tensors[2 * i + 1]) for i in range(n_enc)]
        rest = tensors[2 * n_enc :]
        params = PolicyParams(
            encoder=encoder,
            head_w=rest[0],
            head_b=rest[1],
            relation_w=rest[2],
            gate_w=rest[3],
            gate_b=rest[4],
        )
        return cls(config=config, space=space, params=params)


def apply_gradient_step(
    params: PolicyParams,
    grads: PolicyGrads,
    learning_rate: float,
    velocity: PolicyGrads | None = None,
    momentum: float = 0.0,
) -> PolicyGrads | None:
    """Ascend `params` along `grads` in place; returns the updated velocity."""
    if momentum > 0.0:
        if velocity is None:
            velocity = PolicyGrads.zeros_like(params)
        velocity.scale(momentum)
        velocity.add(grads)
        source = velocity
    else:
        source = grads
    for (_, p), (_, g) in zip(params.named_tensors(), source.named_tensors()):
        p += learning_rate * g
    return velocity
