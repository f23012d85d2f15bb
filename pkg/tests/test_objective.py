import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_difference, fd_relative_error, member_logits_ld, poets_loss_direct, softmax_ld
from oracles import soft_objective_direct
from poets.objective import (
    RegularizationCoeffs,
    batch_gradient,
    empirical_distribution,
    implicit_reward,
    implicit_reward_centered,
    kl_divergence,
    optimal_policy,
    poets_gradient,
    poets_loss,
    poets_loss_via_implicit,
    soft_objective,
    soft_reward,
    soft_rewards,
)
from poets.policy import EnsembleParams, RolloutBatch, grad_log_prob, member_distribution


def simplex(rng, k):
    return rng.dirichlet(np.ones(k))


def random_params(rng, n_actions=5, d_h=3, rank=2, n_members=2):
    return EnsembleParams(
        rng.standard_normal((n_actions, d_h)),
        rng.standard_normal((n_members, rank, d_h)),
        rng.standard_normal((n_members, n_actions, rank)),
    )


def test_coeffs_validation():
    with pytest.raises(ValueError):
        RegularizationCoeffs(alpha=-0.1)
    with pytest.raises(ValueError):
        RegularizationCoeffs().require_positive()
    assert RegularizationCoeffs(0.1, 0.2).total == pytest.approx(0.3)


def test_soft_objective_unregularized(rng):
    p, r = simplex(rng, 5), rng.standard_normal(5)
    assert soft_objective(p, r, simplex(rng, 5), RegularizationCoeffs()) == pytest.approx(p @ r, abs=1e-15)


def test_soft_objective_at_reference(rng):
    p, r = simplex(rng, 5), rng.standard_normal(5)
    assert soft_objective(p, r, p, RegularizationCoeffs(0.0, 0.7)) == pytest.approx(p @ r, abs=1e-14)


def test_soft_objective_hand_instance():
    coeffs = RegularizationCoeffs(alpha=0.1, beta=0.2)
    value = soft_objective([0.5, 0.3, 0.2], [1.0, 0.0, -1.0], np.full(3, 1 / 3), coeffs)
    # long-double direct sum, frozen from the oracle
    assert abs(value - 0.38917344648575012) < 1e-12
    assert abs(value - soft_objective_direct([0.5, 0.3, 0.2], [1, 0, -1], np.full(3, 1 / 3), 0.1, 0.2)) < 1e-12


def test_soft_objective_infinite_kl_rejected():
    with pytest.raises(ValueError):
        soft_objective([0.5, 0.5], [0, 0], [1.0, 0.0], RegularizationCoeffs(0, 0.1))
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == float("inf")


def test_optimal_policy_constant_reward_is_reference(rng):
    ref = simplex(rng, 6)
    pi, _ = optimal_policy(np.full(6, 2.5), ref, RegularizationCoeffs(0.0, 0.3))
    np.testing.assert_allclose(pi.probs, ref, rtol=1e-12)


def test_optimal_policy_entropy_only_is_softmax(rng):
    r = rng.standard_normal(6)
    pi, _ = optimal_policy(r, simplex(rng, 6), RegularizationCoeffs(1.0, 0.0))
    np.testing.assert_allclose(pi.probs, np.exp(r) / np.exp(r).sum(), rtol=1e-12)


def test_optimal_policy_requires_positive_total():
    with pytest.raises(ValueError):
        optimal_policy(np.zeros(3), np.full(3, 1 / 3), RegularizationCoeffs())


def test_optimal_policy_log_partition(rng):
    r, ref = rng.standard_normal(4), simplex(rng, 4)
    c = RegularizationCoeffs(0.2, 0.5)
    pi, log_z = optimal_policy(r, ref, c)
    # J(pi*) equals (alpha + beta) log Z
    assert soft_objective(pi, r, ref, c) == pytest.approx(c.total * log_z, abs=1e-12)


@given(st.integers(0, 10_000))
def test_optimal_policy_beats_random_policies(seed):
    rng = np.random.default_rng(seed)
    r, ref = rng.standard_normal(4), simplex(rng, 4)
    c = RegularizationCoeffs(0.1, 0.3)
    pi, _ = optimal_policy(r, ref, c)
    best = soft_objective(pi, r, ref, c)
    others = rng.dirichlet(np.ones(4), size=200)
    assert all(best >= soft_objective(p, r, ref, c) - 1e-10 for p in others)


def test_implicit_reward_delta_baseline(rng):
    p, ref = simplex(rng, 4), simplex(rng, 4)
    rho = np.eye(4)[2]
    assert implicit_reward_centered(p, ref, RegularizationCoeffs(0.1, 0.2), rho)[2] == 0.0


def test_implicit_reward_direct_formula_and_inverse():
    rng = np.random.default_rng(11)
    p, ref = simplex(rng, 3), simplex(rng, 3)
    c = RegularizationCoeffs(0.1, 0.2)
    rho = np.full(3, 1 / 3)
    direct = 0.3 * np.log(p.astype(np.longdouble)) - 0.2 * np.log(ref.astype(np.longdouble))
    direct = direct - direct.mean()
    np.testing.assert_allclose(implicit_reward_centered(p, ref, c, rho), direct.astype(float), atol=1e-12)
    back, _ = optimal_policy(implicit_reward(p, ref, c), ref, c)
    assert 0.5 * np.abs(back.probs - p).sum() < 1e-8


def test_implicit_reward_of_optimum_recovers_reward(rng):
    r, ref, rho = rng.standard_normal(5), simplex(rng, 5), simplex(rng, 5)
    c = RegularizationCoeffs(0.3, 0.4)
    pi, _ = optimal_policy(r, ref, c)
    np.testing.assert_allclose(implicit_reward_centered(pi, ref, c, rho), r - rho @ r, atol=1e-10)


def test_implicit_reward_zero_probability_rejected():
    with pytest.raises(ValueError):
        implicit_reward_centered([1.0, 0.0], [0.5, 0.5], RegularizationCoeffs(0, 1), [0.5, 0.5])


def test_soft_reward_unregularized_is_reward(rng):
    r = rng.standard_normal(4)
    for a in range(4):
        assert soft_reward(a, r, simplex(rng, 4), simplex(rng, 4), RegularizationCoeffs()) == r[a]


def test_soft_reward_constant_at_optimum(rng):
    r, ref = rng.standard_normal(6), simplex(rng, 6)
    c = RegularizationCoeffs(0.0, 0.25)
    pi, log_z = optimal_policy(r, ref, c)
    sr = soft_rewards(r, pi, ref, c)
    np.testing.assert_allclose(sr, c.beta * log_z, atol=1e-12)


def test_soft_reward_direct_oracle(rng):
    r, p, ref = rng.standard_normal(4), simplex(rng, 4), simplex(rng, 4)
    c = RegularizationCoeffs(0.15, 0.35)
    ld = lambda v: np.asarray(v, dtype=np.longdouble)  # noqa: E731
    oracle = ld(r) + 0.35 * np.log(ld(ref)) - 0.5 * np.log(ld(p))
    for a in range(4):
        assert abs(soft_reward(a, r, p, ref, c) - float(oracle[a])) < 1e-12


def test_poets_loss_zero_at_optimum(rng):
    r, ref = rng.standard_normal(5), simplex(rng, 5)
    c = RegularizationCoeffs(0.2, 0.1)
    pi, _ = optimal_policy(r, ref, c)
    for a in range(5):
        assert poets_loss(a, simplex(rng, 5), pi, ref, r, c) < 1e-20


def test_poets_loss_zero_with_self_baseline(rng):
    r, p, ref = rng.standard_normal(5), simplex(rng, 5), simplex(rng, 5)
    assert poets_loss(3, np.eye(5)[3], p, ref, r, RegularizationCoeffs(0.2, 0.1)) < 1e-28


@given(st.integers(0, 10_000))
def test_poets_loss_forms_agree(seed):
    rng = np.random.default_rng(seed)
    r, p, ref, rho = rng.standard_normal(4), simplex(rng, 4), simplex(rng, 4), simplex(rng, 4)
    c = RegularizationCoeffs(rng.uniform(0, 1), rng.uniform(0.01, 1))
    a = int(rng.integers(4))
    one = poets_loss(a, rho, p, ref, r, c)
    assert one >= 0
    assert abs(one - poets_loss_via_implicit(a, rho, p, ref, r, c)) < 1e-12 * max(1.0, one)
    assert abs(one - poets_loss_direct(a, rho, p, ref, r, c.alpha, c.beta)) < 1e-12 * max(1.0, one)


def _fd_loss_gradient(params, i, x, a, rho, ref, r, c):
    def f(theta):
        q = params.with_flat(theta)
        p = softmax_ld(member_logits_ld(q.trunk, q.branch_a, q.branch_b, i, x))
        return poets_loss_direct(a, rho, p, ref, r, c.alpha, c.beta)

    return central_difference(f, params.flat())


def test_poets_gradient_finite_differences(rng):
    for _ in range(20):
        params = random_params(rng)
        x, r, ref, rho = rng.standard_normal(3), rng.standard_normal(5), simplex(rng, 5), simplex(rng, 5)
        c = RegularizationCoeffs(rng.uniform(0.01, 1), rng.uniform(0.01, 1))
        i, a = int(rng.integers(2)), int(rng.integers(5))
        an = poets_gradient(a, rho, params, i, x, ref, r, c).flat()
        fd = _fd_loss_gradient(params, i, x, a, rho, ref, r, c)
        assert fd_relative_error(an, fd) < 1e-5


def test_poets_gradient_zero_at_optimum_and_self_baseline(rng):
    r, ref = rng.standard_normal(5), simplex(rng, 5)
    c = RegularizationCoeffs(0.0, 0.5)
    pi, _ = optimal_policy(r, ref, c)
    # a single-member trunk whose readout reproduces the optimal logits exactly
    params = EnsembleParams(np.log(pi.probs)[:, None], np.zeros((1, 1, 1)), np.zeros((1, 5, 1)))
    g = poets_gradient(1, simplex(rng, 5), params, 0, np.ones(1), ref, r, c)
    assert g.norm() < 1e-10
    params = random_params(rng, n_members=1)
    g = poets_gradient(2, np.eye(5)[2], params, 0, rng.standard_normal(3), ref, r, c)
    assert g.norm() == 0.0


def test_poets_gradient_shift_invariant(rng):
    params = random_params(rng)
    x, r, ref, rho = rng.standard_normal(3), rng.standard_normal(5), simplex(rng, 5), simplex(rng, 5)
    c = RegularizationCoeffs(0.3, 0.2)
    g1 = poets_gradient(4, rho, params, 1, x, ref, r, c).flat()
    g2 = poets_gradient(4, rho, params, 1, x, ref, r + 17.0, c).flat()
    np.testing.assert_allclose(g1, g2, atol=1e-12)


def _batch(actions, rewards):
    actions = np.asarray(actions)
    return RolloutBatch(actions, np.zeros_like(actions), np.asarray(rewards, dtype=float))


def _expectation_form(batch, w, params, i, x, ref, c):
    """-2(alpha + beta) E_rho[r~ centered * grad log pi(a)] built sample by sample."""
    pi = member_distribution(params, i, x)
    rho = w / w.sum()
    soft = np.array([soft_reward(a, np.eye(params.n_actions)[a] * rw, pi, ref, c) for a, rw in zip(batch.actions, batch.rewards)])
    adv = soft - rho @ soft
    total = params.zeros_like()
    for j, a in enumerate(batch.actions):
        total = total + grad_log_prob(params, i, x, int(a)).scale(-2 * c.total * rho[j] * adv[j])
    return total


def test_batch_gradient_matches_expectation_form_and_per_sample_mean(rng):
    for _ in range(20):
        params = random_params(rng)
        x, ref = rng.standard_normal(3), simplex(rng, 5)
        c = RegularizationCoeffs(rng.uniform(0.01, 1), rng.uniform(0.01, 1))
        G = 6
        batch = _batch(rng.integers(0, 5, G), rng.standard_normal(G))
        w = rng.poisson(1.0, G).astype(float)
        if w.sum() == 0:
            w[0] = 1.0
        got = batch_gradient(batch, w, params, 1, x, ref, c).flat()
        np.testing.assert_allclose(got, _expectation_form(batch, w, params, 1, x, ref, c).flat(), atol=1e-12)

        # reward vector consistent with the batch (one value per action present)
        r = np.zeros(5)
        r[batch.actions] = batch.rewards
        batch = _batch(batch.actions, r[batch.actions])
        got = batch_gradient(batch, w, params, 1, x, ref, c).flat()
        rho = empirical_distribution(batch.actions, w, 5)
        mean = sum(
            (poets_gradient(int(a), rho, params, 1, x, ref, r, c).scale(wj / w.sum()) for a, wj in zip(batch.actions, w)),
            params.zeros_like(),
        )
        np.testing.assert_allclose(got, mean.flat(), atol=1e-12)


def test_batch_gradient_multiset_expansion(rng):
    params = random_params(rng)
    x, ref = rng.standard_normal(3), simplex(rng, 5)
    c = RegularizationCoeffs(0.2, 0.3)
    batch = _batch([1, 3, 0, 4], [0.5, -0.2, 1.0, 0.3])
    got = batch_gradient(batch, np.array([2.0, 0.0, 1.0, 1.0]), params, 0, x, ref, c).flat()
    expanded = _batch([1, 1, 0, 4], [0.5, 0.5, 1.0, 0.3])
    want = batch_gradient(expanded, np.ones(4), params, 0, x, ref, c).flat()
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_batch_gradient_zero_weights_and_negative(rng):
    params = random_params(rng)
    batch = _batch([0, 1], [1.0, 0.0])
    c = RegularizationCoeffs(0.1, 0.1)
    assert batch_gradient(batch, np.zeros(2), params, 0, np.ones(3), simplex(rng, 5), c) is None
    with pytest.raises(ValueError):
        batch_gradient(batch, np.array([1.0, -1.0]), params, 0, np.ones(3), simplex(rng, 5), c)


def test_batch_gradient_equal_rewards_no_regularization(rng):
    params = random_params(rng)
    batch = _batch([0, 2, 4], [0.7, 0.7, 0.7])
    g = batch_gradient(batch, np.ones(3), params, 0, np.ones(3), simplex(rng, 5), RegularizationCoeffs())
    assert g.norm() == 0.0


def test_batch_gradient_clip_inactive_on_policy(rng):
    params = random_params(rng)
    x, ref = rng.standard_normal(3), simplex(rng, 5)
    c = RegularizationCoeffs(0.2, 0.3)
    batch = _batch([1, 3, 0], [0.5, -0.2, 1.0])
    old = np.log(member_distribution(params, 0, x).probs)[batch.actions]
    a = batch_gradient(batch, np.ones(3), params, 0, x, ref, c, clip_eps=0.2, old_log_probs=old).flat()
    b = batch_gradient(batch, np.ones(3), params, 0, x, ref, c).flat()
    np.testing.assert_array_equal(a, b)


def test_batch_gradient_clip_bounds_importance_weight(rng):
    params = random_params(rng)
    x, ref = rng.standard_normal(3), simplex(rng, 5)
    c = RegularizationCoeffs(0.2, 0.3)
    batch = _batch([1, 3, 0], [0.5, -0.2, 1.0])
    lp = np.log(member_distribution(params, 0, x).probs)[batch.actions]
    # stale snapshot: every ratio far above 1 + eps, so the weight is exactly 1.2
    g = batch_gradient(batch, np.ones(3), params, 0, x, ref, c, clip_eps=0.2, old_log_probs=lp - 5.0).flat()
    base = batch_gradient(batch, np.ones(3), params, 0, x, ref, c).flat()
    np.testing.assert_allclose(g, 1.2 * base, atol=1e-12)
