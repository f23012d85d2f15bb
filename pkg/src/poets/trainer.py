"""Ensemble training loop with Poisson bootstrapping and experience replay.

Each round samples a group from the ensemble mixture, evaluates it, assigns per-member
Poisson weights, stores the batch, and then takes one optimizer step per stored batch
(oldest first). A single member without bootstrapping reduces to group-relative policy
optimization on the same soft rewards.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .bootstrap import ReplayBuffers, draw_weights
from .diagnostics import MetricsRecord, entropy, normalized_jsd
from .envs import BanditSpec, ContextualBandit, realize
from .objective import RegularizationCoeffs, ensemble_logit_gradients, optimal_policy, soft_objective
from .policy import (
    ContextFeatures,
    EnsembleParams,
    ParamGradient,
    ensemble_log_probs,
    logit_chain,
    sample_group,
)

log = logging.getLogger(__name__)


class NumericalAbort(FloatingPointError):
    pass


@dataclass
class TrainerConfig:
    n_members: int = 16
    group_size: int = 16
    buffer_capacity: int = 1
    alpha: float = 0.0
    beta: float = 0.1
    trunk_lr: float = 1e-3
    branch_lr: float = 1e-1
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip_norm: float | None = None
    clip_eps: float = 0.2
    standardize: bool = False
    temperature: float = 1.0
    total_rounds: int = 100
    seed: int = 0
    rank: int = 4
    feature_dim: int = 8
    bootstrap_lambda: float = 1.0

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        for name in ("n_members", "group_size", "buffer_capacity", "rank", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.trunk_lr < 0 or self.branch_lr < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive or None")
        if self.clip_eps < 0:
            raise ValueError("clip_eps must be nonnegative")
        if self.total_rounds < 0:
            raise ValueError("total_rounds must be nonnegative")
        if not 0.0 <= self.bootstrap_lambda <= 1.0:
            raise ValueError("bootstrap_lambda must lie in [0, 1]")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")

    @property
    def coeffs(self) -> RegularizationCoeffs:
        return RegularizationCoeffs(self.alpha, self.beta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainerConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown trainer config fields: {sorted(unknown)}")
        return cls(**d)


def grpo_config(config: TrainerConfig) -> TrainerConfig:
    """Single-policy baseline: one member, no bootstrap, standardized advantages."""
    return replace(config, n_members=1, bootstrap_lambda=0.0, standardize=True)


@dataclass
class TrainerState:
    params: EnsembleParams
    ref_trunk: np.ndarray
    contexts: list[ContextFeatures]
    buffers: list[ReplayBuffers]
    m: EnsembleParams
    v: EnsembleParams
    sample_rng: np.random.Generator
    weight_rng: np.random.Generator
    env_rng: np.random.Generator
    round: int = 0
    adam_step: int = 0
    best_seen: list = field(default_factory=list)
    cum_soft_regret: float = 0.0

    def ref_log_probs(self, context: int, temperature: float) -> np.ndarray:
        logits = self.ref_trunk @ self.contexts[context].features / temperature
        m = logits.max()
        return logits - (m + np.log(np.exp(logits - m).sum()))

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "ref_trunk": self.ref_trunk.tolist(),
            "contexts": [c.features.tolist() for c in self.contexts],
            "buffers": [b.to_dict() for b in self.buffers],
            "m": self.m.to_dict(),
            "v": self.v.to_dict(),
            "rng": {
                "sample": self.sample_rng.bit_generator.state,
                "weight": self.weight_rng.bit_generator.state,
                "env": self.env_rng.bit_generator.state,
            },
            "round": self.round,
            "adam_step": self.adam_step,
            "best_seen": list(self.best_seen),
            "cum_soft_regret": self.cum_soft_regret,
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainerState:
        def gen(state):
            g = np.random.Generator(np.random.PCG64())
            g.bit_generator.state = state
            return g

        return cls(
            params=EnsembleParams.from_dict(d["params"]),
            ref_trunk=np.asarray(d["ref_trunk"], dtype=np.float64),
            contexts=[ContextFeatures(np.asarray(f), i) for i, f in enumerate(d["contexts"])],
            buffers=[ReplayBuffers.from_dict(b) for b in d["buffers"]],
            m=EnsembleParams.from_dict(d["m"]),
            v=EnsembleParams.from_dict(d["v"]),
            sample_rng=gen(d["rng"]["sample"]),
            weight_rng=gen(d["rng"]["weight"]),
            env_rng=gen(d["rng"]["env"]),
            round=d["round"],
            adam_step=d["adam_step"],
            best_seen=list(d["best_seen"]),
            cum_soft_regret=d["cum_soft_regret"],
        )


def save_checkpoint(state: TrainerState, path) -> None:
    with open(path, "w") as f:
        json.dump(state.to_dict(), f)


def load_checkpoint(path) -> TrainerState:
    with open(path) as f:
        return TrainerState.from_dict(json.load(f))


def init_state(config: TrainerConfig, env: ContextualBandit) -> TrainerState:
    """Fresh ensemble whose trunk reproduces each context's reference logits, if any."""
    init_rng, sample_rng, weight_rng, env_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4)
    )
    n_ctx, n_actions, d_h = len(env), env.n_actions, config.feature_dim
    feats = init_rng.standard_normal((n_ctx, d_h))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    contexts = [ContextFeatures(feats[c], c) for c in range(n_ctx)]

    targets = np.zeros((n_actions, n_ctx))
    for c in range(n_ctx):
        if env[c].reference_logits is not None:
            targets[:, c] = env[c].reference_logits * config.temperature
    # min-norm trunk with W phi_c = target_c; exact when contexts <= feature_dim
    trunk = targets @ np.linalg.pinv(feats.T)

    params = EnsembleParams.initialize(n_actions, d_h, config.rank, config.n_members, init_rng, trunk=trunk)
    return TrainerState(
        params=params,
        ref_trunk=params.trunk.copy(),
        contexts=contexts,
        buffers=[ReplayBuffers(config.buffer_capacity) for _ in range(n_ctx)],
        m=params.zeros_like(),
        v=params.zeros_like(),
        sample_rng=sample_rng,
        weight_rng=weight_rng,
        env_rng=env_rng,
        best_seen=[-math.inf] * n_ctx,
    )


def clip_by_global_norm(grad: ParamGradient, max_norm: float | None) -> ParamGradient:
    if max_norm is None:
        return grad
    norm = grad.norm()
    if norm > max_norm:
        return grad.scale(max_norm / norm)
    return grad


def optimizer_step(state: TrainerState, grad: ParamGradient, config: TrainerConfig) -> None:
    """Adam with separate learning rates for the trunk and the branches, no weight decay."""
    if not grad.all_finite():
        raise NumericalAbort(f"non-finite gradient at round {state.round}, step {state.adam_step}")
    grad = clip_by_global_norm(grad, config.grad_clip_norm)
    b1, b2 = config.adam_betas
    state.adam_step += 1
    t = state.adam_step
    bc1 = 1.0 - b1**t
    bc2_sqrt = math.sqrt(1.0 - b2**t)
    lrs = (config.trunk_lr, config.branch_lr, config.branch_lr)
    for p, g, m, v, lr in zip(state.params.arrays(), grad.arrays(), state.m.arrays(), state.v.arrays(), lrs):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr / bc1) * m / (np.sqrt(v) / bc2_sqrt + config.adam_eps)


def _soft_objective_rows(P: np.ndarray, r: np.ndarray, ref_log: np.ndarray, coeffs: RegularizationCoeffs):
    logP = np.log(np.maximum(P, 1e-300))
    value = P @ r
    if coeffs.beta > 0:
        value -= coeffs.beta * np.sum(P * (logP - ref_log[None, :]), axis=1)
    if coeffs.alpha > 0:
        value += coeffs.alpha * -np.sum(np.where(P > 0, P * logP, 0.0), axis=1)
    return value


def member_soft_regret(P: np.ndarray, r: np.ndarray, ref_log: np.ndarray, coeffs: RegularizationCoeffs) -> float:
    """Soft regret of playing a uniformly drawn member, averaged over the ensemble."""
    if coeffs.total > 0:
        best, _ = optimal_policy(r, np.exp(ref_log), coeffs)
        top = soft_objective(best, r, np.exp(ref_log), coeffs)
    else:
        top = float(r.max())
    return float(np.mean(top - _soft_objective_rows(P, r, ref_log, coeffs)))


def ensemble_gradient(
    state: TrainerState, batch, weights: np.ndarray, config: TrainerConfig
) -> ParamGradient:
    """Summed gradient of every member's bootstrapped loss on one stored batch."""
    x = state.contexts[batch.context_id]
    log_probs = ensemble_log_probs(state.params, x, config.temperature)
    old = batch.old_log_probs if config.clip_eps > 0 else None
    g, _ = ensemble_logit_gradients(
        batch,
        weights,
        log_probs,
        state.ref_log_probs(batch.context_id, config.temperature),
        config.coeffs,
        clip_eps=config.clip_eps,
        old_log_probs=old,
        standardize=config.standardize,
    )
    return logit_chain(state.params, x, g, config.temperature)


def run_round(state: TrainerState, env: ContextualBandit, config: TrainerConfig) -> MetricsRecord:
    ctx = state.round % len(state.contexts)
    x = state.contexts[ctx]
    bandit = env[ctx]
    log_probs = ensemble_log_probs(state.params, x, config.temperature)
    probs = np.exp(log_probs)

    saved = (state.sample_rng.bit_generator.state, state.env_rng.bit_generator.state)
    try:
        batch = sample_group(state.params, x, config.group_size, state.sample_rng, config.temperature)
        batch.rewards = bandit.evaluate_many(batch.actions, state.env_rng)
    except Exception:
        state.sample_rng.bit_generator.state, state.env_rng.bit_generator.state = saved
        raise
    batch.old_log_probs = log_probs[:, batch.actions]

    ref_log = state.ref_log_probs(ctx, config.temperature)
    mixture = probs.mean(axis=0)
    regret = member_soft_regret(probs, bandit.rewards, ref_log, config.coeffs)
    state.cum_soft_regret += regret
    state.best_seen[ctx] = max(state.best_seen[ctx], float(batch.rewards.max()))
    record = MetricsRecord(
        round=state.round,
        best_seen=state.best_seen[ctx],
        expected_reward=float(mixture @ bandit.rewards),
        entropy=entropy(mixture),
        jsd=normalized_jsd(probs),
        soft_regret=regret,
        cum_soft_regret=state.cum_soft_regret,
        extras={"context": ctx},
    )

    weights = draw_weights(state.weight_rng, config.n_members, config.group_size, config.bootstrap_lambda)
    buffers = state.buffers[ctx]
    buffers.push(batch, weights)
    for stored, _, w in buffers:
        optimizer_step(state, ensemble_gradient(state, stored, w, config), config)
    state.round += 1
    return record


def build_env(env_spec, seed: int) -> ContextualBandit:
    """Realize the environment for one run; reward draws depend on both spec and run seed."""
    specs = env_spec if isinstance(env_spec, (list, tuple)) else [env_spec]
    specs = [s if isinstance(s, BanditSpec) else BanditSpec.from_dict(s) for s in specs]
    return ContextualBandit(
        [realize(s, np.random.default_rng([s.seed, seed, c])) for c, s in enumerate(specs)]
    )


def run_experiment(config: TrainerConfig, env_spec, env: ContextualBandit | None = None) -> list[MetricsRecord]:
    """Run ``total_rounds`` rounds, cycling contexts round-robin."""
    env = build_env(env_spec, config.seed) if env is None else env
    state = init_state(config, env)
    records = []
    for _ in range(config.total_rounds):
        records.append(run_round(state, env, config))
    return records


__all__ = [
    "NumericalAbort",
    "TrainerConfig",
    "TrainerState",
    "build_env",
    "grpo_config",
    "init_state",
    "load_checkpoint",
    "optimizer_step",
    "run_experiment",
    "run_round",
    "save_checkpoint",
]
