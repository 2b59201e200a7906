"""Cost model, expected advance, acceptance bounds and tail diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .models import ScoreModel, drift, sample_marginal, score
from .schedule import TimeGrid
from .special import chi2_cdf, norm_cdf

__all__ = [
    "CostModel",
    "CostSummary",
    "AcceptanceSample",
    "cost_ratio",
    "expected_advance",
    "simulate_advances",
    "acceptance_lower_bound",
    "empirical_acceptance",
    "rejection_time_tail",
    "diff_covariance_overlap",
    "constant_gap_tail_bound",
]


@dataclass(frozen=True)
class CostModel:
    """Evaluation costs of draft (C_p) and target (C_q) plus window size L."""

    C_p: float
    C_q: float
    L: int

    def __post_init__(self):
        if self.C_p < 0.0 or self.C_q <= 0.0:
            raise ValueError("costs must be non-negative with C_q > 0")
        if self.L < 1:
            raise ValueError(f"window size must be >= 1, got {self.L}")
        if self.C_p >= self.C_q:
            warnings.warn("C_p >= C_q: speculative sampling cannot pay off", stacklevel=2)


class CostSummary(NamedTuple):
    ratio: float
    break_even_margin: float


def cost_ratio(advances, cm: CostModel) -> CostSummary:
    """Average cost ratio E[L_hat] / (1 + L C_p / C_q) from observed advances.

    Also returns the break-even margin E[L_hat]/L - C_p/C_q - 1/L; the method
    pays off exactly when the margin is positive.  The ratio involves only
    per-window quantities, so it does not depend on the chain length K.
    """
    advances = np.asarray(advances, dtype=float)
    if advances.size == 0:
        raise ValueError("advances must be non-empty")
    mean_adv = float(advances.mean())
    ratio = mean_adv / (1.0 + cm.L * cm.C_p / cm.C_q)
    margin = mean_adv / cm.L - cm.C_p / cm.C_q - 1.0 / cm.L
    return CostSummary(ratio=ratio, break_even_margin=margin)


def expected_advance(alpha: float, L: int) -> float:
    """Expected advance per window under i.i.d. per-step acceptance alpha.

    Evaluates the summation sum_{l=0}^{L-1} (l+1) alpha^l (1-alpha) + L alpha^L
    directly; it simplifies to (1 - alpha^L) / (1 - alpha).  (The widely
    quoted 'closed form' 1 - alpha^L + L alpha^{L+1} does not match the
    summation: at alpha = 0.5, L = 2 it gives 1.0 instead of 1.5.)
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if L < 1:
        raise ValueError(f"window size must be >= 1, got {L}")
    ls = np.arange(L, dtype=float)
    return float(np.sum((ls + 1.0) * alpha**ls * (1.0 - alpha)) + L * alpha**L)


def simulate_advances(alpha: float, L: int, n_windows: int, rng) -> np.ndarray:
    """Monte Carlo of the advance process: first rejection ends the window."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    accepts = rng.random((n_windows, L)) < alpha
    rejected = ~accepts
    any_rej = rejected.any(axis=1)
    first = np.argmax(rejected, axis=1)
    return np.where(any_rej, first + 1, L).astype(np.int64)


class AcceptanceSample(NamedTuple):
    mean_clipped: float
    mean_ratio: float
    mc_std_clipped: float
    mc_std_ratio: float
    n: int


def _delta_norms(model_p: ScoreModel, model_q: ScoreModel, t: float, gamma: float,
                 eps: float, n_mc: int, rng) -> np.ndarray:
    """||Delta_n|| samples at chain time t with states from the target marginal.

    ||Delta||^2 = gamma/4 (eps + 1/eps)^2 g(1-t)^2 ||s_p - s_q||^2 evaluated at
    Y ~ p_{1-t} (clipped).
    """
    s_time = min(1.0 - t, model_q.schedule.t_clip)
    ys = sample_marginal(model_q, s_time, n_mc, rng)
    gap = score(model_p, s_time, ys) - score(model_q, s_time, ys)
    gap2 = np.sum(gap * gap, axis=1)
    g2 = float(model_q.schedule.g2(s_time))
    coef = 0.25 * gamma * (eps + 1.0 / eps) ** 2 * g2
    return np.sqrt(coef * gap2)


def acceptance_lower_bound(model_p: ScoreModel, model_q: ScoreModel, t: float,
                           gamma: float, eps: float, n_mc: int, rng):
    """Lower bound exp(-1/8 gamma (eps+1/eps)^2 g^2 E||s_p - s_q||^2).

    The score-gap expectation is estimated by Monte Carlo over the target
    marginal at the queried time; returns (bound, score_gap_mse).  The bound
    controls the mean acceptance *ratio* E[a_n] (the unclipped Gaussian
    density ratio), via Jensen's inequality on E[log a_n] = -E||Delta||^2/2.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive (the bound degenerates as 1/eps)")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    dn = _delta_norms(model_p, model_q, t, gamma, eps, n_mc, rng)
    s_time = min(1.0 - t, model_q.schedule.t_clip)
    g2 = float(model_q.schedule.g2(s_time))
    coef = 0.25 * gamma * (eps + 1.0 / eps) ** 2 * g2
    gap_mse = float(np.mean(dn * dn) / coef) if coef > 0 else 0.0
    bound = float(np.exp(-0.5 * np.mean(dn * dn)))
    return bound, gap_mse


def empirical_acceptance(model_p: ScoreModel, model_q: ScoreModel, t: float,
                         gamma: float, eps: float, n_mc: int, rng) -> AcceptanceSample:
    """Joint Monte Carlo of the acceptance ratio a_n and of min(1, a_n).

    One state Y from the target marginal and one fresh Z per sample:
    a_n = exp(-Z . Delta - ||Delta||^2 / 2).
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    dn = _delta_norms(model_p, model_q, t, gamma, eps, n_mc, rng)
    z = rng.standard_normal(n_mc)
    ratio = np.exp(-z * dn - 0.5 * dn * dn)
    clipped = np.minimum(1.0, ratio)
    return AcceptanceSample(
        mean_clipped=float(clipped.mean()),
        mean_ratio=float(ratio.mean()),
        mc_std_clipped=float(clipped.std(ddof=1) / np.sqrt(n_mc)),
        mc_std_ratio=float(ratio.std(ddof=1) / np.sqrt(n_mc)),
        n=n_mc,
    )


def rejection_time_tail(model_p: ScoreModel, model_q: ScoreModel, grid: TimeGrid,
                        eps: float, k_max: int, n_mc: int, rng,
                        d: int | None = None) -> np.ndarray:
    """Survival function P(tau > k) of the first rejection time, k = 0..k_max.

    Simulates the coupled chain (draft from model_p, verify against model_q
    with the reflection acceptance test) and records the first step where
    the draft is rejected.  Equals the Feynman-Kac product-of-acceptances
    expectation.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    k_max = min(k_max, grid.K)
    if d is not None:
        dim = d
    elif model_q.gmm is not None:
        dim = model_q.effective_gmm.d
    elif model_p.gmm is not None:
        dim = model_p.effective_gmm.d
    else:
        raise ValueError("dimension is ambiguous for custom models; pass d")
    y = rng.standard_normal((n_mc, dim))
    alive = np.ones(n_mc, dtype=bool)
    survival = np.empty(k_max + 1)
    survival[0] = 1.0
    for k in range(1, k_max + 1):
        t_prev = grid.times[k - 1]
        sigma = np.sqrt(grid.gamma) * eps * np.sqrt(
            float(model_q.schedule.g2(grid.reverse_time(k - 1))))
        idx = np.flatnonzero(alive)
        if idx.size:
            ya = y[idx]
            m_p = ya + grid.gamma * drift(model_p, t_prev, ya, eps)
            m_q = ya + grid.gamma * drift(model_q, t_prev, ya, eps)
            delta = (m_p - m_q) / sigma
            z = rng.standard_normal((idx.size, dim))
            log_ratio = -np.sum(z * delta, axis=1) - 0.5 * np.sum(delta * delta, axis=1)
            accept = rng.random(idx.size) <= np.exp(np.minimum(log_ratio, 0.0))
            y[idx] = m_p + sigma * z  # while coupled, Y equals the draft
            alive[idx] = accept
        survival[k] = alive.mean()
    return survival


def diff_covariance_overlap(sigma1: float, sigma2: float, d: int) -> float:
    """Overlap of centered isotropic Gaussians with stds sigma1 > sigma2.

    The overlap integral min(p, q) equals 1 - TV and is the probability that
    a maximal coupling of the two kernels accepts (X = Y).  With Q ~ chi^2_d
    and R^2 = d log(sigma1^2/sigma2^2) / (1/sigma2^2 - 1/sigma1^2), the
    total-variation mass is chi2cdf(R^2/sigma2^2) - chi2cdf(R^2/sigma1^2)
    (the densities cross on the sphere of radius R), and this function
    returns its complement.  The overlap collapses to zero as d grows, which
    is why same-variance kernels are required at scale.  Note: the usual
    presentation of this diagnostic labels the chi-square difference itself
    as the acceptance probability; that mass is the rejection side.
    """
    if not sigma1 > sigma2 > 0.0:
        raise ValueError(f"need sigma1 > sigma2 > 0, got {sigma1}, {sigma2}")
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    r2 = d * np.log(sigma1**2 / sigma2**2) / (1.0 / sigma2**2 - 1.0 / sigma1**2)
    tv = chi2_cdf(r2 / sigma2**2, d) - chi2_cdf(r2 / sigma1**2, d)
    return 1.0 - tv


def constant_gap_tail_bound(gap: float, gamma: float, k_max: int) -> np.ndarray:
    """Upper bound (2 Phi(-sqrt(gamma) gap / 2))^k for a constant drift gap.

    Matches the coupled-chain survival when the per-step mean gap has norm
    gamma * gap and the kernel std is sqrt(gamma) (unit diffusion, eps = 1).
    """
    p_step = 2.0 * norm_cdf(-np.sqrt(gamma) * gap / 2.0)
    return p_step ** np.arange(k_max + 1)
