"""Linear-softmax policy ensembles with a shared trunk and low-rank branches.

Member ``i`` produces logits ``h_i(x) = (W + B_i A_i) phi(x) / temperature`` over a
finite action set. All members share the trunk ``W``; ``B_i`` starts at zero so the
ensemble initially coincides with the trunk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = 1e-300


@dataclass
class ContextFeatures:
    features: np.ndarray
    context_id: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 1 or self.features.size < 1:
            raise ValueError("context features must be a non-empty vector")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("context features must be finite")

    @property
    def dim(self) -> int:
        return self.features.size


@dataclass
class EnsembleParams:
    """Trunk ``W`` (|A| x d_h) and stacked branches ``A`` (n x r x d_h), ``B`` (n x |A| x r).

    Also used as the container for parameter gradients and optimizer moments.
    """

    trunk: np.ndarray
    branch_a: np.ndarray
    branch_b: np.ndarray

    def __post_init__(self):
        n_actions, d_h = self.trunk.shape
        n, r, d_a = self.branch_a.shape
        if d_a != d_h or self.branch_b.shape != (n, n_actions, r):
            raise ValueError(
                f"inconsistent shapes: trunk {self.trunk.shape}, "
                f"A {self.branch_a.shape}, B {self.branch_b.shape}"
            )

    @classmethod
    def initialize(
        cls,
        n_actions: int,
        d_h: int,
        rank: int,
        n_members: int,
        rng: np.random.Generator,
        trunk: np.ndarray | None = None,
    ) -> EnsembleParams:
        if min(n_actions, d_h, rank, n_members) < 1:
            raise ValueError("n_actions, d_h, rank and n_members must all be >= 1")
        if trunk is None:
            trunk = np.zeros((n_actions, d_h))
        branch_a = rng.normal(0.0, 1.0 / np.sqrt(d_h), size=(n_members, rank, d_h))
        branch_b = np.zeros((n_members, n_actions, rank))
        return cls(np.array(trunk, dtype=np.float64), branch_a, branch_b)

    @property
    def n_actions(self) -> int:
        return self.trunk.shape[0]

    @property
    def n_members(self) -> int:
        return self.branch_a.shape[0]

    @property
    def rank(self) -> int:
        return self.branch_a.shape[1]

    @property
    def d_h(self) -> int:
        return self.trunk.shape[1]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.trunk, self.branch_a, self.branch_b

    def copy(self) -> EnsembleParams:
        return EnsembleParams(self.trunk.copy(), self.branch_a.copy(), self.branch_b.copy())

    def zeros_like(self) -> EnsembleParams:
        return EnsembleParams(
            np.zeros_like(self.trunk), np.zeros_like(self.branch_a), np.zeros_like(self.branch_b)
        )

    def __add__(self, other: EnsembleParams) -> EnsembleParams:
        return EnsembleParams(
            self.trunk + other.trunk,
            self.branch_a + other.branch_a,
            self.branch_b + other.branch_b,
        )

    def __sub__(self, other: EnsembleParams) -> EnsembleParams:
        return self + other.scale(-1.0)

    def scale(self, c: float) -> EnsembleParams:
        return EnsembleParams(c * self.trunk, c * self.branch_a, c * self.branch_b)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays())))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def with_flat(self, flat: np.ndarray) -> EnsembleParams:
        sizes = [a.size for a in self.arrays()]
        parts = np.split(np.asarray(flat, dtype=np.float64), np.cumsum(sizes)[:-1])
        return EnsembleParams(*(p.reshape(a.shape) for p, a in zip(parts, self.arrays())))

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("trunk", "branch_a", "branch_b")}

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleParams:
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("trunk", "branch_a", "branch_b")))


ParamGradient = EnsembleParams


@dataclass
class PolicyDistribution:
    probs: np.ndarray
    log_probs: np.ndarray = field(default=None)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.log_probs is None:
            self.log_probs = safe_log(self.probs)

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> PolicyDistribution:
        logits = np.asarray(logits, dtype=np.float64)
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError("non-finite logits")
        log_probs = logits - _logsumexp(logits)
        return cls(np.exp(log_probs), log_probs)

    @property
    def n_actions(self) -> int:
        return self.probs.size


def safe_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, LOG_FLOOR))


def _logsumexp(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    return m + np.log(np.sum(np.exp(z - m), axis=axis, keepdims=True))


def _features(x) -> np.ndarray:
    return x.features if isinstance(x, ContextFeatures) else np.asarray(x, dtype=np.float64)


def ensemble_logits(params: EnsembleParams, x, temperature: float = 1.0) -> np.ndarray:
    """Logits of all members, shape (n, |A|)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    phi = _features(x)
    base = params.trunk @ phi
    low = np.einsum("nar,nr->na", params.branch_b, params.branch_a @ phi)
    logits = (base[None, :] + low) / temperature
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    return logits


def ensemble_log_probs(params: EnsembleParams, x, temperature: float = 1.0) -> np.ndarray:
    """Log-probabilities of all members, shape (n, |A|)."""
    logits = ensemble_logits(params, x, temperature)
    return logits - _logsumexp(logits)


def member_distribution(
    params: EnsembleParams, i: int, x, temperature: float = 1.0
) -> PolicyDistribution:
    if not 0 <= i < params.n_members:
        raise IndexError(f"member index {i} out of range for {params.n_members} members")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    phi = _features(x)
    logits = (params.trunk @ phi + params.branch_b[i] @ (params.branch_a[i] @ phi)) / temperature
    return PolicyDistribution.from_logits(logits)


def mixture_distribution(params: EnsembleParams, x, temperature: float = 1.0) -> PolicyDistribution:
    probs = np.exp(ensemble_log_probs(params, x, temperature))
    return PolicyDistribution(probs.mean(axis=0))


@dataclass
class RolloutBatch:
    """One round of data: actions drawn from the ensemble mixture, tagged by member."""

    actions: np.ndarray
    members: np.ndarray
    rewards: np.ndarray | None = None
    context_id: int = 0
    # per-member log-probabilities of the actions at ingestion time, shape (n, G)
    old_log_probs: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.actions.size

    def to_dict(self) -> dict:
        return {
            "actions": self.actions.tolist(),
            "members": self.members.tolist(),
            "rewards": None if self.rewards is None else self.rewards.tolist(),
            "context_id": self.context_id,
            "old_log_probs": None if self.old_log_probs is None else self.old_log_probs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RolloutBatch:
        return cls(
            actions=np.asarray(d["actions"], dtype=np.int64),
            members=np.asarray(d["members"], dtype=np.int64),
            rewards=None if d["rewards"] is None else np.asarray(d["rewards"], dtype=np.float64),
            context_id=int(d["context_id"]),
            old_log_probs=(
                None if d["old_log_probs"] is None else np.asarray(d["old_log_probs"], dtype=np.float64)
            ),
        )


def sample_group(
    params: EnsembleParams,
    x,
    group_size: int,
    rng: np.random.Generator,
    temperature: float = 1.0,
) -> RolloutBatch:
    """Assign each slot a uniformly random member, then draw its action from that member."""
    if group_size < 1:
        raise ValueError("group size must be >= 1")
    probs = np.exp(ensemble_log_probs(params, x, temperature))
    members = rng.integers(0, params.n_members, size=group_size)
    u = rng.random(group_size)
    cdf = np.cumsum(probs[members], axis=1)
    actions = np.minimum((cdf < (u * cdf[:, -1])[:, None]).sum(axis=1), params.n_actions - 1)
    context_id = x.context_id if isinstance(x, ContextFeatures) else 0
    return RolloutBatch(actions=actions.astype(np.int64), members=members, context_id=context_id)


def logit_chain(
    params: EnsembleParams, x, logit_grads: np.ndarray, temperature: float = 1.0
) -> ParamGradient:
    """Chain per-member gradients w.r.t. logits (n x |A|) back to the parameters."""
    phi = _features(x)
    g = logit_grads / temperature
    proj = params.branch_a @ phi  # (n, r)
    trunk = np.outer(g.sum(axis=0), phi)
    grad_b = g[:, :, None] * proj[:, None, :]
    bt_g = np.einsum("nar,na->nr", params.branch_b, g)
    grad_a = bt_g[:, :, None] * phi[None, None, :]
    return ParamGradient(trunk, grad_a, grad_b)


def grad_log_prob(
    params: EnsembleParams, i: int, x, a: int, temperature: float = 1.0
) -> ParamGradient:
    """Gradient of log pi_i(a|x); branches other than ``i`` get exact zeros."""
    pi = member_distribution(params, i, x, temperature)
    g = np.zeros((params.n_members, params.n_actions))
    g[i] = -pi.probs
    g[i, a] += 1.0
    return logit_chain(params, x, g, temperature)
