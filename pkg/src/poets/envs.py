"""Synthetic finite-action bandits: GP-prior, linear-feature, and deceptive rewards."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np


def psd_sqrt(cov: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Factor ``S`` with ``S @ S.T == cov`` for a PSD matrix, from its eigendecomposition.

    Eigenvalues that are negative only through round-off are clipped to zero;
    clearly negative ones raise.
    """
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    scale = max(float(np.trace(cov)), 1e-300)
    if vals.min() < -tol * scale:
        raise np.linalg.LinAlgError(f"matrix is not PSD (min eigenvalue {vals.min():.3e})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def rbf_kernel(features: np.ndarray, lengthscale: float, variance: float = 1.0) -> np.ndarray:
    sq = np.sum(features**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * features @ features.T, 0.0)
    if np.isinf(lengthscale):
        return variance * np.ones_like(d2)
    return variance * np.exp(-0.5 * d2 / lengthscale**2)


def linear_kernel(features: np.ndarray) -> np.ndarray:
    return features @ features.T


@dataclass
class BanditSpec:
    kind: Literal["gp", "linear", "deceptive"] = "gp"
    n_actions: int = 16
    action_features: list | None = None
    kernel: Literal["rbf", "linear"] = "rbf"
    lengthscale: float = 0.2
    noise_std: float = 0.0
    bounded: bool = False
    seed: int = 0
    # deceptive layout
    plateau_frac: float = 0.6
    gap: float = 0.3
    peak_value: float = 1.0
    floor_value: float = 0.0
    ref_strength: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gp", "linear", "deceptive"):
            raise ValueError(f"unknown bandit kind {self.kind!r}")
        if self.kernel not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.action_features is not None:
            feats = np.asarray(self.action_features, dtype=np.float64)
            if feats.ndim == 1:
                feats = feats[:, None]
            if not np.all(np.isfinite(feats)):
                raise ValueError("action features must be finite")
            self.n_actions = feats.shape[0]
        if self.n_actions < 2:
            raise ValueError("a bandit needs at least 2 actions")

    def features(self) -> np.ndarray:
        if self.action_features is not None:
            feats = np.asarray(self.action_features, dtype=np.float64)
            return feats[:, None] if feats.ndim == 1 else feats
        return np.linspace(0.0, 1.0, self.n_actions)[:, None]

    def kernel_matrix(self) -> np.ndarray:
        feats = self.features()
        if self.kernel == "linear":
            return linear_kernel(feats)
        return rbf_kernel(feats, self.lengthscale)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> BanditSpec:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown bandit spec fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RealizedBandit:
    spec: BanditSpec
    rewards: np.ndarray
    reference_logits: np.ndarray | None = None
    n_evaluations: int = 0
    history: list = field(default_factory=list)

    @property
    def n_actions(self) -> int:
        return self.rewards.size

    @property
    def noise_std(self) -> float:
        return self.spec.noise_std

    @property
    def optimum(self) -> float:
        return float(self.rewards.max())

    def evaluate(self, a: int, rng: np.random.Generator) -> float:
        return float(self.evaluate_many(np.array([a]), rng)[0])

    def evaluate_many(self, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.int64)
        if np.any((actions < 0) | (actions >= self.n_actions)):
            raise IndexError("action out of range")
        y = self.rewards[actions].copy()
        if self.spec.noise_std > 0:
            y += rng.normal(0.0, self.spec.noise_std, size=y.size)
        self.n_evaluations += y.size
        self.history.extend(zip(actions.tolist(), y.tolist()))
        return y


def _deceptive_rewards(spec: BanditSpec) -> tuple[np.ndarray, np.ndarray]:
    k = spec.n_actions
    width = max(1, int(round(spec.plateau_frac * k)))
    if width >= k:
        raise ValueError("plateau must leave room for the peak")
    r = np.full(k, spec.floor_value, dtype=np.float64)
    r[:width] = spec.peak_value - spec.gap
    r[k - 1] = spec.peak_value
    ref_logits = np.zeros(k)
    ref_logits[:width] = spec.ref_strength
    return r, ref_logits


def realize(spec: BanditSpec, rng: np.random.Generator | None = None) -> RealizedBandit:
    """Draw the hidden reward vector once; deterministic given ``spec.seed`` when ``rng`` is None."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    ref_logits = None
    if spec.kind == "gp":
        S = psd_sqrt(spec.kernel_matrix())
        r = S @ rng.standard_normal(spec.n_actions)
    elif spec.kind == "linear":
        feats = spec.features()
        r = feats @ rng.standard_normal(feats.shape[1])
    else:
        r, ref_logits = _deceptive_rewards(spec)
    if spec.bounded:
        r = r / max(1.0, float(np.max(np.abs(r))))
    return RealizedBandit(spec=spec, rewards=np.asarray(r, dtype=np.float64), reference_logits=ref_logits)


class ContextualBandit:
    """Independent realized bandits, one per context id."""

    def __init__(self, bandits: list[RealizedBandit]):
        if not bandits:
            raise ValueError("need at least one context")
        self.bandits = bandits

    def __len__(self) -> int:
        return len(self.bandits)

    def __getitem__(self, context: int) -> RealizedBandit:
        if not 0 <= context < len(self.bandits):
            raise KeyError(f"unknown context {context}")
        return self.bandits[context]

    @property
    def n_actions(self) -> int:
        return self.bandits[0].n_actions

    def evaluate(self, context: int, a: int, rng: np.random.Generator) -> float:
        return self[context].evaluate(a, rng)

    def evaluate_many(self, context: int, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self[context].evaluate_many(actions, rng)


def contextual(specs: list[BanditSpec], rng: np.random.Generator | None = None) -> ContextualBandit:
    if not specs:
        raise ValueError("need at least one bandit spec")
    sizes = {s.n_actions for s in specs}
    if len(sizes) != 1:
        raise ValueError("all contexts must share the action set size")
    return ContextualBandit([realize(s, rng) for s in specs])
