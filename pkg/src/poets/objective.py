"""Regularized objective, implicit rewards and the reward-matching loss with its gradients.

Notation: ``alpha`` weighs the entropy bonus, ``beta`` the KL penalty to the reference
policy. Rewards are centered against a baseline distribution ``rho`` so that the
log-partition constant never has to be computed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import (
    EnsembleParams,
    ParamGradient,
    PolicyDistribution,
    RolloutBatch,
    ensemble_log_probs,
    logit_chain,
    safe_log,
)

STD_EPS = 1e-8


@dataclass(frozen=True)
class RegularizationCoeffs:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")

    @property
    def total(self) -> float:
        return self.alpha + self.beta

    def require_positive(self):
        if self.total <= 0:
            raise ValueError("alpha + beta must be positive")


def _probs(pi) -> np.ndarray:
    return pi.probs if isinstance(pi, PolicyDistribution) else np.asarray(pi, dtype=np.float64)


def _log_probs(pi) -> np.ndarray:
    return pi.log_probs if isinstance(pi, PolicyDistribution) else safe_log(_probs(pi))


def kl_divergence(p, q) -> float:
    """KL(p || q) as an exact finite sum; infinite if p has mass where q has none."""
    p, q = _probs(p), _probs(q)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def shannon_entropy(p) -> float:
    p = _probs(p)
    mask = p > 0
    return float(-np.sum(p[mask] * np.log(p[mask])))


def soft_objective(pi, r, pi_ref, coeffs: RegularizationCoeffs) -> float:
    """Expected reward minus ``beta`` KL to the reference plus ``alpha`` entropy."""
    p = _probs(pi)
    value = float(np.dot(p, np.asarray(r, dtype=np.float64)))
    if coeffs.beta > 0:
        kl = kl_divergence(p, pi_ref)
        if not np.isfinite(kl):
            raise ValueError("policy puts mass outside the reference support (infinite KL)")
        value -= coeffs.beta * kl
    if coeffs.alpha > 0:
        value += coeffs.alpha * shannon_entropy(p)
    return value


def optimal_policy(r, pi_ref, coeffs: RegularizationCoeffs) -> tuple[PolicyDistribution, float]:
    """Closed-form maximizer of the soft objective and its log-partition constant."""
    coeffs.require_positive()
    ref = _probs(pi_ref)
    if not np.any(ref > 0):
        raise ValueError("reference policy has empty support")
    tau = coeffs.total
    with np.errstate(divide="ignore"):
        log_ref = np.where(ref > 0, np.log(np.where(ref > 0, ref, 1.0)), -np.inf)
    z = (coeffs.beta / tau) * log_ref + np.asarray(r, dtype=np.float64) / tau
    if coeffs.beta == 0:
        z = np.asarray(r, dtype=np.float64) / tau
    m = np.max(z)
    log_z = m + np.log(np.sum(np.exp(z - m)))
    log_probs = z - log_z
    return PolicyDistribution(np.exp(log_probs), np.maximum(log_probs, np.log(1e-300))), float(log_z)


def implicit_reward(pi, pi_ref, coeffs: RegularizationCoeffs) -> np.ndarray:
    """Reward for which ``pi`` is optimal, up to the action-independent log-partition term."""
    coeffs.require_positive()
    return coeffs.total * _log_probs(pi) - coeffs.beta * _log_probs(pi_ref)


def implicit_reward_centered(pi, pi_ref, coeffs: RegularizationCoeffs, rho) -> np.ndarray:
    rho = _probs(rho)
    support = rho > 0
    if np.any(_probs(pi)[support] <= 0):
        raise ValueError("zero-probability action under pi on the baseline support")
    rp = implicit_reward(pi, pi_ref, coeffs)
    return rp - np.dot(rho[support], rp[support])


def soft_rewards(r, pi, pi_ref, coeffs: RegularizationCoeffs) -> np.ndarray:
    """Vector of soft rewards ``r + beta log pi_ref - (beta + alpha) log pi``."""
    r = np.asarray(r, dtype=np.float64)
    out = r.copy()
    if coeffs.beta > 0:
        out += coeffs.beta * _log_probs(pi_ref)
    if coeffs.total > 0:
        out -= coeffs.total * _log_probs(pi)
    return out


def soft_reward(a: int, r, pi, pi_ref, coeffs: RegularizationCoeffs) -> float:
    if coeffs.total > 0 and _probs(pi)[a] <= 0:
        raise ValueError(f"action {a} has zero probability under pi")
    return float(soft_rewards(r, pi, pi_ref, coeffs)[a])


def _centered_soft_reward(a, rho, pi, pi_ref, r, coeffs) -> float:
    rho = _probs(rho)
    sr = soft_rewards(r, pi, pi_ref, coeffs)
    support = rho > 0
    return float(sr[a] - np.dot(rho[support], sr[support]))


def poets_loss(a: int, rho, pi, pi_ref, r, coeffs: RegularizationCoeffs) -> float:
    """Squared mismatch between centered true reward and centered implicit reward at ``a``."""
    if _probs(pi)[a] <= 0:
        raise ValueError(f"action {a} has zero probability under pi")
    return _centered_soft_reward(a, rho, pi, pi_ref, r, coeffs) ** 2


def poets_loss_via_implicit(a: int, rho, pi, pi_ref, r, coeffs: RegularizationCoeffs) -> float:
    """Same loss, evaluated literally from centered true and implicit rewards."""
    rho_p = _probs(rho)
    r = np.asarray(r, dtype=np.float64)
    support = rho_p > 0
    r_centered = r[a] - np.dot(rho_p[support], r[support])
    return float((r_centered - implicit_reward_centered(pi, pi_ref, coeffs, rho)[a]) ** 2)


def poets_gradient(
    a: int,
    rho,
    params: EnsembleParams,
    i: int,
    x,
    pi_ref,
    r,
    coeffs: RegularizationCoeffs,
    temperature: float = 1.0,
) -> ParamGradient:
    """Analytic gradient of ``poets_loss`` for member ``i`` (trunk plus branch ``i``)."""
    log_probs = ensemble_log_probs(params, x, temperature)[i]
    pi = PolicyDistribution(np.exp(log_probs), log_probs)
    rho_p = _probs(rho)
    adv = _centered_soft_reward(a, rho_p, pi, pi_ref, r, coeffs)
    # grad log pi(a) - E_rho[grad log pi] w.r.t. logits is e_a - rho
    g = np.zeros((params.n_members, params.n_actions))
    g[i] = -rho_p
    g[i, a] += 1.0
    g[i] *= -2.0 * coeffs.total * adv
    return logit_chain(params, x, g, temperature)


def empirical_distribution(actions: np.ndarray, weights: np.ndarray, n_actions: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    return np.bincount(actions, weights=w, minlength=n_actions) / w.sum()


def _clip_factors(ratio: np.ndarray, clip_eps: float) -> np.ndarray:
    """Importance weight ``pi_new / pi_old`` clamped to ``[1 - eps, 1 + eps]``.

    Used as a constant multiplier on each sample's term, so stale replayed batches can
    neither blow up nor flip the update.
    """
    return np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)


def ensemble_logit_gradients(
    batch: RolloutBatch,
    weights: np.ndarray,
    log_probs: np.ndarray,
    ref_log_probs: np.ndarray,
    coeffs: RegularizationCoeffs,
    clip_eps: float = 0.0,
    old_log_probs: np.ndarray | None = None,
    standardize: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Batch gradient of the bootstrapped loss w.r.t. each member's logits.

    ``weights`` and ``log_probs`` carry one row per member. Returns the (n, |A|) logit
    gradients and a boolean mask of members that had any positive weight.
    """
    actions = batch.actions
    w = np.asarray(weights, dtype=np.float64)
    w_sum = w.sum(axis=1)
    active = w_sum > 0
    rho = np.where(active[:, None], w / np.where(active, w_sum, 1.0)[:, None], 0.0)

    lp_a = log_probs[:, actions]  # (n, G)
    soft = batch.rewards[None, :] + coeffs.beta * ref_log_probs[actions][None, :] - coeffs.total * lp_a
    adv = soft - np.sum(rho * soft, axis=1, keepdims=True)
    if standardize:
        std = np.sqrt(np.sum(rho * adv**2, axis=1, keepdims=True))
        adv = adv / (std + STD_EPS)
    coef = rho * adv
    if old_log_probs is not None and clip_eps > 0:
        ratio = np.exp(lp_a - old_log_probs)
        coef = coef * _clip_factors(ratio, clip_eps)

    n, n_actions = log_probs.shape
    # sum_j coef_j (e_{a_j} - pi)
    g = np.zeros((n, n_actions))
    for k in range(n):
        g[k] = np.bincount(actions, weights=coef[k], minlength=n_actions)
    g -= coef.sum(axis=1, keepdims=True) * np.exp(log_probs)
    g *= -2.0 * coeffs.total
    g[~active] = 0.0
    return g, active


def batch_gradient(
    batch: RolloutBatch,
    weights: np.ndarray,
    params: EnsembleParams,
    i: int,
    x,
    pi_ref,
    coeffs: RegularizationCoeffs,
    clip_eps: float = 0.0,
    old_log_probs: np.ndarray | None = None,
    standardize: bool = False,
    temperature: float = 1.0,
) -> ParamGradient | None:
    """Weighted-batch gradient for member ``i``.

    The baseline is the weighted empirical distribution of the batch. Returns ``None``
    when every weight is zero, meaning the member skips this batch.
    """
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if w.sum() <= 0:
        return None
    log_probs = ensemble_log_probs(params, x, temperature)
    old = None if old_log_probs is None else np.asarray(old_log_probs, dtype=np.float64)[None, :]
    g_i, _ = ensemble_logit_gradients(
        batch,
        w[None, :],
        log_probs[i : i + 1],
        _log_probs(pi_ref),
        coeffs,
        clip_eps=clip_eps,
        old_log_probs=old,
        standardize=standardize,
    )
    g = np.zeros((params.n_members, params.n_actions))
    g[i] = g_i[0]
    return logit_chain(params, x, g, temperature)
