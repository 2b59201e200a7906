import numpy as np
import pytest
import scipy.stats

import specdiff as sd
from conftest import gaussian_pdf, trapz, tv_quadrature_1d
from specdiff.coupling import (BudgetExceededError, DiscreteDist, discrete_maximal_coupling,
                               encoder_reflection_coupling, gaussian_entropy_printed,
                               gaussian_tv, naive_adjusted_rejection,
                               projected_reflection_coupling, reflection_coupling,
                               temperature_mean_coefficient, tempered_reflection_coupling,
                               typical_acceptance)
from specdiff.models import GaussianKernel

FIG2_TV = 0.6826894921370859  # 2 Phi(1) - 1 for means 0.5/1.5, sigma = 0.5


# ---------------------------------------------------------------------------
# discrete maximal coupling
# ---------------------------------------------------------------------------

def test_discrete_equal_distributions_always_accept():
    p = DiscreteDist([0.2, 0.5, 0.3])
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.choice(3, p=p.probs)
        out = discrete_maximal_coupling(p, p, int(x), rng.random())
        assert bool(out.accepted)
        assert int(out.y) == int(x)


def test_discrete_disjoint_supports_always_reject():
    p = DiscreteDist([1.0, 0.0])
    q = DiscreteDist([0.0, 1.0])
    rng = np.random.default_rng(1)
    for _ in range(100):
        out = discrete_maximal_coupling(p, q, 0, rng.random())
        assert not bool(out.accepted)
        assert int(out.y) == 1


def test_discrete_mismatch_probability_matches_tv():
    p = DiscreteDist([0.6, 0.3, 0.1])
    q = DiscreteDist([0.2, 0.3, 0.5])
    tv = 0.5 * np.sum(np.abs(p.probs - q.probs))
    assert tv == pytest.approx(0.4, abs=1e-15)
    rng = np.random.default_rng(2)
    n = 400_000
    xs = rng.choice(3, size=n, p=p.probs)
    us = rng.random(n)
    mism = sum(int(discrete_maximal_coupling(p, q, int(x), float(u)).y != x)
               for x, u in zip(xs, us))
    se = np.sqrt(tv * (1 - tv) / n)
    assert mism / n == pytest.approx(tv, abs=3 * se)


def test_discrete_output_marginal():
    # Residual sampling must leave Y exactly ~ q.
    p = DiscreteDist([0.6, 0.3, 0.1])
    q = DiscreteDist([0.2, 0.3, 0.5])
    rng = np.random.default_rng(3)
    n = 400_000
    xs = rng.choice(3, size=n, p=p.probs)
    us = rng.random(n)
    counts = np.zeros(3)
    for x, u in zip(xs, us):
        counts[int(discrete_maximal_coupling(p, q, int(x), float(u)).y)] += 1
    freq = counts / n
    se = np.sqrt(q.probs * (1 - q.probs) / n)
    assert np.all(np.abs(freq - q.probs) < 4 * se + 1e-9)


def test_discrete_precondition():
    p = DiscreteDist([1.0, 0.0])
    q = DiscreteDist([0.5, 0.5])
    with pytest.raises(ValueError):
        discrete_maximal_coupling(p, q, 1, 0.5)  # p(x) = 0


def test_discrete_dist_validation():
    with pytest.raises(ValueError):
        DiscreteDist([0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteDist([-0.1, 1.1])


# ---------------------------------------------------------------------------
# closed-form TV
# ---------------------------------------------------------------------------

def test_tv_zero_gap():
    assert gaussian_tv(np.zeros(3), np.zeros(3), 1.0) == 0.0


def test_tv_fig2_value_and_quadrature():
    tv = gaussian_tv(np.array([0.5]), np.array([1.5]), 0.5)
    assert tv == pytest.approx(FIG2_TV, abs=1e-12)
    assert tv == pytest.approx(tv_quadrature_1d(0.5, 1.5, 0.5), abs=1e-9)


def test_tv_limit_one():
    assert gaussian_tv(np.array([0.0]), np.array([1e6]), 1.0) > 1 - 1e-12


def test_tv_sigma_validation():
    with pytest.raises(ValueError):
        gaussian_tv(np.zeros(1), np.ones(1), 0.0)


# ---------------------------------------------------------------------------
# reflection maximal coupling
# ---------------------------------------------------------------------------

def test_reflection_equal_means_always_accepts():
    rng = np.random.default_rng(4)
    m = np.array([0.3, -0.7])
    out = reflection_coupling(m, m, 0.5, rng.standard_normal((1000, 2)), rng.random(1000))
    assert np.all(out.accepted)
    assert np.array_equal(out.y, out.x)
    assert np.all(out.log_accept_ratio == 0.0)


def test_reflection_mismatch_rate_matches_tv():
    rng = np.random.default_rng(5)
    n = 1_000_000
    out = reflection_coupling(np.array([0.5]), np.array([1.5]), 0.5,
                              rng.standard_normal((n, 1)), rng.random(n))
    mismatch = np.mean(np.any(out.x != out.y, axis=1))
    se = np.sqrt(FIG2_TV * (1 - FIG2_TV) / n)
    assert mismatch == pytest.approx(FIG2_TV, abs=4 * se)


def test_reflection_accept_implies_bitwise_equal():
    rng = np.random.default_rng(6)
    out = reflection_coupling(np.array([0.0, 1.0]), np.array([0.4, 0.2]), 0.7,
                              rng.standard_normal((5000, 2)), rng.random(5000))
    acc = np.asarray(out.accepted)
    assert np.array_equal(out.y[acc], out.x[acc])
    assert np.any(~acc)


def test_reflection_rejection_is_isometry():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((5000, 3))
    u = np.ones(5000)  # force rejection wherever the ratio is below 1
    m_p = np.array([1.0, 0.0, 0.0])
    m_q = np.zeros(3)
    out = reflection_coupling(m_p, m_q, 0.4, z, u)
    rej = ~np.asarray(out.accepted)
    radii = np.linalg.norm(out.y[rej] - m_q, axis=1)
    assert np.allclose(radii, 0.4 * np.linalg.norm(z[rej], axis=1), rtol=1e-12)


def test_reflection_marginals_ks():
    rng = np.random.default_rng(8)
    n = 100_000
    for d in (1, 3):
        m_p = np.linspace(0.2, 0.5, d)
        m_q = np.linspace(-0.1, 0.6, d)
        sigma = 0.5
        out = reflection_coupling(m_p, m_q, sigma, rng.standard_normal((n, d)), rng.random(n))
        for c in range(d):
            _, p_x = scipy.stats.kstest(out.x[:, c], "norm", args=(m_p[c], sigma))
            _, p_y = scipy.stats.kstest(out.y[:, c], "norm", args=(m_q[c], sigma))
            assert p_x > 0.01
            assert p_y > 0.01


def test_reflection_log_space_no_overflow():
    # ||Delta|| ~ 1e3 in d = 1e4: raw density ratios overflow, the log form must not.
    d = 10_000
    rng = np.random.default_rng(9)
    m_p = np.zeros(d)
    m_q = np.full(d, 10.0)
    with np.errstate(over="raise"):
        out = reflection_coupling(m_p, m_q, 1.0, rng.standard_normal((100, d)), rng.random(100))
    assert np.linalg.norm((m_p - m_q) / 1.0) == pytest.approx(1e3)
    assert np.all(np.isfinite(out.log_accept_ratio))
    assert np.all(np.isfinite(out.y))


def test_reflection_sigma_validation():
    with pytest.raises(ValueError):
        reflection_coupling(np.zeros(1), np.ones(1), 0.0, np.zeros(1), 0.5)


# ---------------------------------------------------------------------------
# temperature
# ---------------------------------------------------------------------------

def test_tempered_tau1_bitwise_identical():
    rng = np.random.default_rng(10)
    z = rng.standard_normal((2000, 2))
    u = rng.random(2000)
    m_p = np.array([0.1, 0.9])
    m_q = np.array([0.5, 0.2])
    a = reflection_coupling(m_p, m_q, 0.3, z, u)
    b = tempered_reflection_coupling(m_p, m_q, 0.3, z, u, 1.0)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.accepted, b.accepted)
    assert np.array_equal(a.log_accept_ratio, b.log_accept_ratio)


def test_tempered_large_tau_accepts_everything():
    rng = np.random.default_rng(11)
    out = tempered_reflection_coupling(np.array([0.0]), np.array([5.0]), 1.0,
                                       rng.standard_normal((5000, 1)), rng.random(5000), 1e12)
    assert np.all(out.accepted)


def test_tempered_acceptance_monotone_in_tau():
    rng = np.random.default_rng(12)
    z = rng.standard_normal((200_000, 1))
    u = rng.random(200_000)
    rates = []
    for tau in (0.25, 0.5, 1.0, 2.0, 4.0):
        out = tempered_reflection_coupling(np.array([0.0]), np.array([1.0]), 1.0, z, u, tau)
        rates.append(np.mean(out.accepted))
    assert np.all(np.diff(rates) >= 0)


def _mean_shift_quadrature(delta, tau):
    # Oracle: 1D integral of the accept/reflect split along the gap direction.
    z = np.linspace(-14, 14, 400_001)
    w = gaussian_pdf(z, 0.0, 1.0)
    a = np.minimum(1.0, np.exp((-z * delta - delta**2 / 2) / tau))
    integrand = a * (delta + z) + (1 - a) * (-z)
    return trapz(integrand * w, z) / delta


@pytest.mark.parametrize("tau", [0.25, 0.5, 2.0, 4.0])
def test_temperature_mean_coefficient_vs_quadrature(tau):
    for delta in (0.3, 1.0, 2.5):
        c = temperature_mean_coefficient(delta, tau)
        assert c == pytest.approx(_mean_shift_quadrature(delta, tau), abs=1e-10)


def test_temperature_mean_coefficient_signs():
    assert temperature_mean_coefficient(1.0, 1.0) == pytest.approx(0.0, abs=1e-14)
    assert temperature_mean_coefficient(1.0, 2.0) > 0
    assert temperature_mean_coefficient(1.0, 0.5) < 0
    assert temperature_mean_coefficient(1.0, 1e9) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("tau", [0.5, 2.0])
def test_tempered_mean_shift_monte_carlo(tau):
    # E[Y] = m_q + C_tau(||Delta||) (m_p - m_q) at sigma = 1, ||Delta|| = 1.
    rng = np.random.default_rng(13)
    n = 10_000_000
    m_p, m_q = np.array([1.0]), np.array([0.0])
    out = tempered_reflection_coupling(m_p, m_q, 1.0, rng.standard_normal((n, 1)),
                                       rng.random(n), tau)
    mc_mean = out.y.mean()
    mc_se = out.y.std() / np.sqrt(n)
    expected = temperature_mean_coefficient(1.0, tau) * 1.0
    assert mc_mean == pytest.approx(expected, abs=4 * mc_se)


# ---------------------------------------------------------------------------
# typical acceptance
# ---------------------------------------------------------------------------

def test_typical_accepts_when_kappa_matches_density():
    kern = GaussianKernel(mean=np.zeros(2), sigma=1.0)
    x = np.array([0.3, -0.2])
    q = np.exp(kern.log_density(x))
    assert typical_acceptance(x, kern, kappa=float(q), delta=1e12, u=0.999999)


def test_typical_rejects_when_thresholds_huge():
    kern = GaussianKernel(mean=np.zeros(2), sigma=1.0)
    x = np.array([0.3, -0.2])
    assert not typical_acceptance(x, kern, kappa=1e200, delta=1e200, u=1e-8)


def test_typical_matches_hand_formula():
    kern = GaussianKernel(mean=np.array([0.0]), sigma=1.0)
    x = np.array([0.7])
    kappa, delta = 0.5, 2.0
    q = np.exp(-0.5 * 0.7**2) / np.sqrt(2 * np.pi)
    ent = 0.5 * (1 + np.log(2 * np.pi) + 1.0)
    a = min(1.0, max(q / kappa, q * np.exp(ent) / delta))
    # u just below / just above the computed threshold
    assert typical_acceptance(x, kern, kappa, delta, a - 1e-12)
    assert not typical_acceptance(x, kern, kappa, delta, a + 1e-12)
    assert gaussian_entropy_printed(1, 1.0) == pytest.approx(ent, abs=1e-12)


def test_typical_validation():
    kern = GaussianKernel(mean=np.zeros(1), sigma=1.0)
    with pytest.raises(ValueError):
        typical_acceptance(np.zeros(1), kern, kappa=0.0, delta=1.0, u=0.5)


# ---------------------------------------------------------------------------
# projected / encoder couplings
# ---------------------------------------------------------------------------

def test_projected_identity_matches_reflection_bitwise():
    rng = np.random.default_rng(14)
    d = 4
    z = rng.standard_normal((10_000, d))
    u = rng.random(10_000)
    m_p = rng.standard_normal(d)
    m_q = rng.standard_normal(d)
    a = reflection_coupling(m_p, m_q, 0.6, z, u)
    b = projected_reflection_coupling(np.eye(d), m_p, m_q, 0.6, z, u)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.accepted, b.accepted)
    assert np.array_equal(a.x, b.x)


def _well_conditioned(rng, r, d):
    # Singular values in [0.5, 2] keep the oracle's eigendecomposition roundoff
    # below the comparison tolerance.
    u, _ = np.linalg.qr(rng.standard_normal((r, r)))
    v, _ = np.linalg.qr(rng.standard_normal((d, r)))
    return (u * rng.uniform(0.5, 2.0, size=r)) @ v.T


@pytest.mark.parametrize("shape", [(2, 5), (3, 3), (4, 8)])
def test_latent_reflection_identity(shape):
    # exp(-(Delta + 2Z)^T pinv(A) A Delta / 2) equals the latent Gaussian ratio
    # N(z_A + Delta_A)/N(z_A) with z_A = (A A^T)^{-1/2} A z.
    r, d = shape
    rng = np.random.default_rng(15)
    for _ in range(100):
        A = _well_conditioned(rng, r, d)
        z = rng.standard_normal(d)
        delta = rng.standard_normal(d)
        gram = A @ A.T
        w = A.T @ np.linalg.solve(gram, A @ delta)
        lhs = -0.5 * (delta + 2 * z) @ w
        evals, evecs = np.linalg.eigh(gram)
        inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
        z_a = inv_sqrt @ (A @ z)
        d_a = inv_sqrt @ (A @ delta)
        rhs = -0.5 * (np.sum((z_a + d_a) ** 2) - np.sum(z_a**2))
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_projected_latent_pushforward_marginal():
    # For surjective A (r < d) the latent image A y must be N(A m_q, sigma^2 A A^T).
    rng = np.random.default_rng(16)
    r, d = 2, 5
    A = rng.standard_normal((r, d))
    m_p = rng.standard_normal(d)
    m_q = rng.standard_normal(d)
    sigma = 0.8
    n = 100_000
    out = projected_reflection_coupling(A, m_p, m_q, sigma, rng.standard_normal((n, d)),
                                        rng.random(n))
    lat = out.y @ A.T
    mean = A @ m_q
    cov = sigma**2 * (A @ A.T)
    for c in range(r):
        _, p = scipy.stats.kstest(lat[:, c], "norm", args=(mean[c], np.sqrt(cov[c, c])))
        assert p > 0.01


def test_projected_singular_gram_rejected():
    A = np.zeros((2, 3))
    with pytest.raises(ValueError):
        projected_reflection_coupling(A, np.zeros(3), np.ones(3), 1.0, np.zeros(3), 0.5)


def test_encoder_identity_matches_reflection():
    rng = np.random.default_rng(17)
    z = rng.standard_normal((5000, 3))
    u = rng.random(5000)
    m_p = np.array([0.3, 0.0, -0.2])
    m_q = np.array([0.0, 0.5, 0.1])
    a = reflection_coupling(m_p, m_q, 0.5, z, u)
    b = encoder_reflection_coupling(lambda v: v, lambda v: v, m_p, m_q, 0.5, z, u)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.accepted, b.accepted)


def test_encoder_delta_over_tau_matches_tempered():
    rng = np.random.default_rng(18)
    z = rng.standard_normal((5000, 2))
    u = rng.random(5000)
    m_p = np.array([1.0, 0.0])
    m_q = np.array([0.0, 0.3])
    tau = 2.0
    a = tempered_reflection_coupling(m_p, m_q, 0.7, z, u, tau)
    b = encoder_reflection_coupling(lambda v: v / tau, lambda v: v, m_p, m_q, 0.7, z, u)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.accepted, b.accepted)


def test_encoder_linear_matches_projected():
    rng = np.random.default_rng(19)
    r, d = 3, 6
    A = rng.standard_normal((r, d))
    pinv = np.linalg.pinv(A)
    z = rng.standard_normal((2000, d))
    u = rng.random(2000)
    m_p = rng.standard_normal(d)
    m_q = rng.standard_normal(d)
    a = projected_reflection_coupling(A, m_p, m_q, 0.9, z, u)
    b = encoder_reflection_coupling(lambda v: A @ v, lambda v: pinv @ v, m_p, m_q, 0.9, z, u)
    assert np.allclose(a.y, b.y, atol=1e-10)
    assert np.array_equal(a.accepted, b.accepted)


def test_encoder_non_finite_rejected():
    with pytest.raises(FloatingPointError):
        encoder_reflection_coupling(lambda v: v * np.inf, lambda v: v,
                                    np.zeros(2), np.ones(2), 1.0, np.zeros(2), 0.5)


# ---------------------------------------------------------------------------
# naive adjusted rejection baseline
# ---------------------------------------------------------------------------

def test_naive_mean_trials_is_inverse_tv():
    p = GaussianKernel(mean=np.array([0.5]), sigma=0.5)
    q = GaussianKernel(mean=np.array([1.5]), sigma=0.5)
    rng = np.random.default_rng(20)
    n = 100_000
    trials = np.array([naive_adjusted_rejection(p, q, rng)[1] for _ in range(n)])
    mean_expected = 1.0 / FIG2_TV
    var_expected = (1 - FIG2_TV) / FIG2_TV**2
    se = np.sqrt(var_expected / n)
    assert trials.mean() == pytest.approx(mean_expected, abs=3 * se)


def test_naive_budget_exceeded_for_equal_kernels():
    k = GaussianKernel(mean=np.zeros(1), sigma=1.0)
    with pytest.raises(BudgetExceededError):
        naive_adjusted_rejection(k, k, np.random.default_rng(21), max_trials=100)


def test_naive_output_distribution_matches_residual():
    # Outputs follow r(x) = max(0, q - p) / integral by a one-sample KS test.
    p = GaussianKernel(mean=np.array([0.5]), sigma=0.5)
    q = GaussianKernel(mean=np.array([1.5]), sigma=0.5)
    rng = np.random.default_rng(22)
    xs = np.array([naive_adjusted_rejection(p, q, rng)[0][0] for _ in range(20_000)])
    grid = np.linspace(-3, 6, 20_001)
    residual = np.maximum(0.0, gaussian_pdf(grid, 1.5, 0.5) - gaussian_pdf(grid, 0.5, 0.5))
    cdf = np.concatenate([[0.0], np.cumsum((residual[1:] + residual[:-1]) / 2
                                           * np.diff(grid))])
    cdf /= cdf[-1]
    _, p_val = scipy.stats.kstest(xs, lambda v: np.interp(v, grid, cdf))
    assert p_val > 0.01
