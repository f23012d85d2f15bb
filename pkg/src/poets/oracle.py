"""Exact Gaussian beliefs over per-action rewards and KL-regularized Thompson sampling.

This is the reference the ensemble method is checked against: posterior conditioning,
information gain, the cumulative soft-regret bound and exact soft regret.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import psd_sqrt
from .objective import RegularizationCoeffs, optimal_policy, soft_objective
from .policy import PolicyDistribution

NOISELESS_ETA = 1e-3


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray
    noise_std: float = NOISELESS_ETA

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match the mean")

    @classmethod
    def prior(cls, cov: np.ndarray, noise_std: float) -> GaussianBelief:
        cov = np.asarray(cov, dtype=np.float64)
        return cls(np.zeros(cov.shape[0]), cov.copy(), effective_noise(noise_std))

    @property
    def variances(self) -> np.ndarray:
        return np.clip(np.diag(self.cov), 0.0, None)


def effective_noise(noise_std: float) -> float:
    """Noise level used inside the belief; noiseless environments get a small floor."""
    return max(float(noise_std), NOISELESS_ETA)


def posterior_update(belief: GaussianBelief, a: int, y: float) -> GaussianBelief:
    """Condition on one observation ``y = r(a) + N(0, eta^2)``."""
    eta2 = belief.noise_std**2
    if eta2 <= 0:
        raise ValueError("posterior update needs positive observation noise")
    col = belief.cov[:, a]
    s = col[a] + eta2
    gain = col / s
    mean = belief.mean + gain * (y - belief.mean[a])
    cov = belief.cov - np.outer(gain, col)
    cov = 0.5 * (cov + cov.T)
    # keep diagonal from drifting below zero through cancellation
    np.fill_diagonal(cov, np.maximum(np.diag(cov), 0.0))
    return GaussianBelief(mean, cov, belief.noise_std)


def sample_reward(belief: GaussianBelief, rng: np.random.Generator) -> np.ndarray:
    return belief.mean + psd_sqrt(belief.cov) @ rng.standard_normal(belief.mean.size)


def exact_ts_round(
    belief: GaussianBelief, pi_ref, coeffs: RegularizationCoeffs, rng: np.random.Generator
) -> tuple[np.ndarray, PolicyDistribution]:
    """Draw a reward from the belief and return it with its regularized-optimal policy."""
    r_tilde = sample_reward(belief, rng)
    pi, _ = optimal_policy(r_tilde, pi_ref, coeffs)
    return r_tilde, pi


def info_gain(variances, eta: float) -> float:
    """Mutual information of observations at points with the given predictive variances."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    v = np.asarray(variances, dtype=np.float64)
    return float(0.5 * np.sum(np.log1p(v / eta**2)))


def info_gain_logdet(gram: np.ndarray, eta: float) -> float:
    """Same quantity from the joint Gram matrix of the played points."""
    t = gram.shape[0]
    _, logdet = np.linalg.slogdet(np.eye(t) + gram / eta**2)
    return 0.5 * float(logdet)


def greedy_gamma_trace(prior: GaussianBelief, T: int, eta: float | None = None) -> np.ndarray:
    """Greedy information-gain estimates after 1..T observations (max-variance selection)."""
    eta = prior.noise_std if eta is None else eta
    belief = GaussianBelief(prior.mean.copy(), prior.cov.copy(), eta)
    gains = np.zeros(T)
    total = 0.0
    for t in range(T):
        var = belief.variances
        a = int(np.argmax(var))
        total += 0.5 * math.log1p(var[a] / eta**2)
        gains[t] = total
        # the posterior covariance does not depend on the observed value
        belief = posterior_update(belief, a, belief.mean[a])
    return gains


def greedy_gamma(prior: GaussianBelief, T: int, eta: float | None = None) -> float:
    """Greedy estimate of the maximal information gain after ``T`` observations."""
    if T <= 0:
        return 0.0
    return float(greedy_gamma_trace(prior, T, eta)[-1])


def bound_trace(prior: GaussianBelief, T: int, n_actions: int, eta: float | None = None) -> np.ndarray:
    """Regret bound evaluated at every horizon ``t = 1..T``."""
    eta = prior.noise_std if eta is None else eta
    gammas = greedy_gamma_trace(prior, T, eta)
    t = np.arange(1, T + 1)
    return confidence_beta(n_actions) * math.sqrt(noise_constant(eta)) * np.sqrt(t * gammas)


def confidence_beta(n_actions: int) -> float:
    return 1.0 + math.sqrt(2.0 * math.log(2.0 * n_actions) + 2.0)


def noise_constant(eta: float) -> float:
    if eta <= 0:
        raise ValueError("eta must be positive")
    return 2.0 / math.log1p(eta**-2)


def regret_bound(T: int, gamma: float, n_actions: int, eta: float) -> float:
    return confidence_beta(n_actions) * math.sqrt(noise_constant(eta)) * math.sqrt(T * gamma)


def soft_regret(pi_t, r, pi_ref, coeffs: RegularizationCoeffs) -> float:
    best, _ = optimal_policy(r, pi_ref, coeffs)
    return soft_objective(best, r, pi_ref, coeffs) - soft_objective(pi_t, r, pi_ref, coeffs)


@dataclass
class SubgaussianCheck:
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs

    @property
    def ratio(self) -> float:
        return self.rhs / self.lhs if self.lhs > 0 else math.inf


def subgaussian_bound_check(
    belief: GaussianBelief,
    rng: np.random.Generator,
    n_samples: int = 100_000,
    select=None,
) -> SubgaussianCheck:
    """Monte-Carlo check of ``E|r_x - r'_x| <= beta_conf * sqrt(E[sigma_x^2])``.

    ``r`` and ``r'`` are independent draws from ``belief`` and ``x = select(r)`` (argmax by
    default), so the selected index depends on ``r`` but not on ``r'``.
    """
    if select is None:
        select = lambda samples: np.argmax(samples, axis=1)  # noqa: E731
    S = psd_sqrt(belief.cov)
    k = belief.mean.size
    r = belief.mean + rng.standard_normal((n_samples, k)) @ S.T
    r2 = belief.mean + rng.standard_normal((n_samples, k)) @ S.T
    x = np.asarray(select(r))
    rows = np.arange(n_samples)
    lhs = float(np.mean(np.abs(r[rows, x] - r2[rows, x])))
    rhs = confidence_beta(k) * math.sqrt(float(np.mean(belief.variances[x])))
    return SubgaussianCheck(lhs, rhs)


@dataclass
class RegretLedger:
    n_actions: int
    eta: float
    per_round: list = field(default_factory=list)
    played_variances: list = field(default_factory=list)

    def record(self, regret: float, variance_at_played: float):
        self.per_round.append(float(regret))
        self.played_variances.append(float(variance_at_played))

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.per_round)

    @property
    def realized_info_gain(self) -> float:
        return info_gain(self.played_variances, self.eta)

    @property
    def beta_conf(self) -> float:
        return confidence_beta(self.n_actions)

    @property
    def c_eta(self) -> float:
        return noise_constant(self.eta)


def run_exact_ts(
    rewards: np.ndarray,
    prior: GaussianBelief,
    pi_ref,
    coeffs: RegularizationCoeffs,
    T: int,
    rng: np.random.Generator,
    env_noise: float | None = None,
) -> tuple[RegretLedger, list[PolicyDistribution], list[int], list[float]]:
    """Sequential exact KL-regularized Thompson sampling against a fixed hidden reward."""
    env_noise = prior.noise_std if env_noise is None else env_noise
    ledger = RegretLedger(rewards.size, prior.noise_std)
    belief = prior
    policies, actions, observations = [], [], []
    for _ in range(T):
        _, pi = exact_ts_round(belief, pi_ref, coeffs, rng)
        a = int(min(np.searchsorted(np.cumsum(pi.probs), rng.random() * pi.probs.sum()), rewards.size - 1))
        y = float(rewards[a] + (rng.normal(0.0, env_noise) if env_noise > 0 else 0.0))
        ledger.record(soft_regret(pi, rewards, pi_ref, coeffs), belief.variances[a])
        belief = posterior_update(belief, a, y)
        policies.append(pi)
        actions.append(a)
        observations.append(y)
    return ledger, policies, actions, observations
