"""Verification kernels: maximal couplings, their variants and diagnostics.

All Gaussian kernels here share one structure.  With Delta = (m_p - m_q)/sigma
and the draft X = m_p + sigma Z, the draft is accepted when

    U <= min(1, exp(-(Delta + 2 Z) . w / 2))

for a direction vector ``w``:

    w = Delta            reflection maximal coupling,
    w = Delta / tau      temperature variant,
    w = pinv(A) A Delta  latent-space (projected) coupling,
    w = dec(enc(Delta))  auto-encoder coupling.

On rejection the noise is reflected obliquely across ``w``:

    Y = m_q + sigma * (Z - 2 (Z . w) / (Delta . w) * Delta).

For w = Delta the acceptance ratio is exactly N(Z + Delta)/N(Z), the
reflection is the Householder map (Id - 2 e e^T) Z, and the pair (X, Y) is a
maximal coupling of N(m_p, sigma^2 Id) and N(m_q, sigma^2 Id) with
P(X != Y) = 2 Phi(||m_p - m_q|| / (2 sigma)) - 1.

Everything is a pure function of its inputs including the random draws (z, u)
supplied by the caller; batched (..., d) draws broadcast through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import GaussianKernel
from .special import norm_cdf, norm_pdf

__all__ = [
    "CouplingOutcome",
    "DiscreteDist",
    "BudgetExceededError",
    "discrete_maximal_coupling",
    "gaussian_tv",
    "reflection_coupling",
    "tempered_reflection_coupling",
    "projected_reflection_coupling",
    "encoder_reflection_coupling",
    "typical_acceptance",
    "gaussian_entropy_printed",
    "naive_adjusted_rejection",
    "temperature_mean_coefficient",
]

# Below this, Delta (or its projection onto w) is treated as zero: the
# acceptance ratio is exactly 1 and the reflection direction is unused.
DEGENERATE_TOL = 1e-12


class BudgetExceededError(RuntimeError):
    """Raised when rejection sampling exhausts its trial budget (p ~= q)."""


@dataclass(frozen=True)
class CouplingOutcome:
    """Result of one verification kernel call.

    ``x`` is the draft sample (marginally ~ p), ``y`` the output (marginally
    ~ q for the exact kernels), ``accepted`` implies y == x bitwise, and
    ``log_accept_ratio`` stores the log of the min(1, .) argument before
    clamping.  Fields are arrays when the call was batched.
    """

    x: np.ndarray
    y: np.ndarray
    accepted: np.ndarray
    log_accept_ratio: np.ndarray


@dataclass(frozen=True)
class DiscreteDist:
    """Probability vector over a finite alphabet."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if self.probs.ndim != 1:
            raise ValueError("probs must be a vector")
        if np.any(self.probs < 0.0):
            raise ValueError("probabilities must be non-negative")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities must sum to 1, got {self.probs.sum()!r}")

    @property
    def size(self) -> int:
        return self.probs.shape[0]


def discrete_maximal_coupling(p: DiscreteDist, q: DiscreteDist, x: int, u: float) -> CouplingOutcome:
    """Draft-verify step on a finite alphabet (the LLM-style kernel).

    Given x ~ p and u ~ U[0,1]: accept iff u <= min(1, q(x)/p(x)); otherwise
    sample Y from the residual r(z) proportional to max(0, q(z) - p(z)).  The
    residual draw uses the leftover uniform (u - a)/(1 - a), which is again
    U[0,1] conditionally on rejection, keeping the kernel a pure function of
    (p, q, x, u).
    """
    if p.size != q.size:
        raise ValueError("p and q must share an alphabet")
    if not 0 <= x < p.size:
        raise ValueError(f"symbol {x} outside alphabet of size {p.size}")
    if p.probs[x] <= 0.0:
        raise ValueError("x must have positive probability under p")
    a = min(1.0, q.probs[x] / p.probs[x])
    log_ratio = np.log(q.probs[x]) - np.log(p.probs[x]) if q.probs[x] > 0 else -np.inf
    if u <= a:
        return CouplingOutcome(x=np.asarray(x), y=np.asarray(x), accepted=np.asarray(True),
                               log_accept_ratio=np.asarray(log_ratio))
    residual = np.maximum(0.0, q.probs - p.probs)
    total = residual.sum()
    if total <= 0.0:
        raise ValueError("rejection occurred but the residual is empty (p == q?)")
    cdf = np.cumsum(residual / total)
    u_res = (u - a) / (1.0 - a)
    y = int(np.searchsorted(cdf, u_res, side="right"))
    y = min(y, p.size - 1)
    return CouplingOutcome(x=np.asarray(x), y=np.asarray(y), accepted=np.asarray(False),
                           log_accept_ratio=np.asarray(log_ratio))


def gaussian_tv(m_p, m_q, sigma: float) -> float:
    """Total variation between N(m_p, sigma^2 Id) and N(m_q, sigma^2 Id).

    Equal-covariance Gaussians admit the closed form
    TV = 2 Phi(||m_p - m_q|| / (2 sigma)) - 1.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    gap = np.linalg.norm(np.atleast_1d(np.asarray(m_p, dtype=float) - np.asarray(m_q, dtype=float)))
    return 2.0 * norm_cdf(gap / (2.0 * sigma)) - 1.0


def _oblique_coupling(m_p, m_q, sigma, z, u, w, gate) -> CouplingOutcome:
    """Shared accept/reflect core; ``w`` is the direction, ``gate`` = Delta . w."""
    m_p = np.asarray(m_p, dtype=float)
    m_q = np.asarray(m_q, dtype=float)
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float)
    delta = (m_p - m_q) / sigma
    x = m_p + sigma * z

    if abs(gate) <= DEGENERATE_TOL:
        accepted = np.broadcast_to(True, u.shape)
        zeros = np.zeros(u.shape)
        return CouplingOutcome(x=x, y=x.copy(), accepted=np.asarray(accepted),
                               log_accept_ratio=zeros)

    log_ratio = -(0.5 * np.sum(delta * w) + z @ w)
    accepted = u <= np.exp(np.minimum(log_ratio, 0.0))
    y_reflect = m_q + sigma * (z - (2.0 / gate) * np.expand_dims(z @ w, -1) * delta)
    if np.ndim(accepted) == 0:
        y = x if accepted else y_reflect
    else:
        y = np.where(accepted[..., None], x, y_reflect)
    return CouplingOutcome(x=x, y=y, accepted=np.asarray(accepted),
                           log_accept_ratio=np.asarray(log_ratio))


def tempered_reflection_coupling(m_p, m_q, sigma: float, z, u, tau: float) -> CouplingOutcome:
    """Reflection coupling with a temperature on the acceptance test.

    The acceptance ratio N(Z+Delta; 0, tau Id)/N(Z; 0, tau Id) equals
    exp((-Delta . Z - ||Delta||^2 / 2) / tau); the rejection branch is the
    plain reflection.  tau = 1 reproduces :func:`reflection_coupling`
    bit-for-bit; tau > 1 trades exactness for higher acceptance.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma} (couplings require a stochastic kernel)")
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    m_p = np.asarray(m_p, dtype=float)
    m_q = np.asarray(m_q, dtype=float)
    delta = (m_p - m_q) / sigma
    if np.linalg.norm(delta) <= DEGENERATE_TOL:
        return _oblique_coupling(m_p, m_q, sigma, z, u, delta, 0.0)
    w = delta / tau
    return _oblique_coupling(m_p, m_q, sigma, z, u, w, float(np.dot(delta, w)))


def reflection_coupling(m_p, m_q, sigma: float, z, u) -> CouplingOutcome:
    """Reflection maximal coupling of N(m_p, sigma^2 Id) and N(m_q, sigma^2 Id).

    Accept X = m_p + sigma Z iff U <= min(1, N(Z+Delta)/N(Z)); otherwise
    reflect: Y = m_q + sigma (Id - 2 e e^T) Z with e = Delta/||Delta||.  The
    outcome attains P(X != Y) = TV exactly.
    """
    return tempered_reflection_coupling(m_p, m_q, sigma, z, u, 1.0)


def projected_reflection_coupling(A, m_p, m_q, sigma: float, z, u) -> CouplingOutcome:
    """Coupling that is maximal for the pushforwards (A x, A y).

    Uses w = pinv(A) A Delta where pinv(A) = A^T (A A^T)^{-1}; the acceptance
    ratio exp(-(Delta + 2Z)^T w / 2) equals the latent-space Gaussian ratio
    and the reflected noise pushes forward to the latent Householder
    reflection.  A must have full row rank; for square invertible A this is
    exactly :func:`reflection_coupling`.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    A = np.asarray(A, dtype=float)
    m_p = np.asarray(m_p, dtype=float)
    m_q = np.asarray(m_q, dtype=float)
    delta = (m_p - m_q) / sigma
    gram = A @ A.T
    try:
        latent = np.linalg.solve(gram, A @ delta)
    except np.linalg.LinAlgError as exc:
        raise ValueError("A A^T is singular; A must be surjective") from exc
    w = A.T @ latent
    return _oblique_coupling(m_p, m_q, sigma, z, u, w, float(np.dot(delta, w)))


def encoder_reflection_coupling(enc, dec, m_p, m_q, sigma: float, z, u) -> CouplingOutcome:
    """Auto-encoder variant: the direction is Delta* = dec(enc(Delta)).

    enc = A and dec = pinv(A) recovers the projected coupling; Delta* =
    Delta/tau recovers the temperature variant.  If Delta . Delta* is (near)
    zero the draft is accepted deterministically.
    """
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    m_p = np.asarray(m_p, dtype=float)
    m_q = np.asarray(m_q, dtype=float)
    delta = (m_p - m_q) / sigma
    w = np.asarray(dec(enc(delta)), dtype=float)
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("dec(enc(Delta)) is not finite")
    return _oblique_coupling(m_p, m_q, sigma, z, u, w, float(np.dot(delta, w)))


def gaussian_entropy_printed(d: int, sigma: float) -> float:
    """Entropy surrogate H(q) = (d/2)(1 + log(2 pi) + sigma^2).

    Note the last term: the usual differential entropy of N(m, sigma^2 Id)
    is (d/2)(1 + log(2 pi sigma^2)); this variant (with sigma^2 outside the
    log) is kept as the typical-acceptance reference defines it.
    """
    return 0.5 * d * (1.0 + np.log(2.0 * np.pi) + sigma**2)


def typical_acceptance(x, q_kernel: GaussianKernel, kappa: float, delta: float, u):
    """Typical-acceptance test: u <= min(1, max(q(x)/kappa, q(x) e^{H(q)}/delta)).

    A density-threshold rule rather than a coupling: the engine keeps the
    draft when it passes and otherwise falls back to the reflected target
    draw.  Computed in log space; never forms the raw density.
    """
    if kappa <= 0.0 or delta <= 0.0:
        raise ValueError("kappa and delta must be positive")
    logq = q_kernel.log_density(x)
    ent = gaussian_entropy_printed(q_kernel.d, q_kernel.sigma)
    log_a = np.minimum(0.0, np.maximum(logq - np.log(kappa), logq + ent - np.log(delta)))
    res = np.asarray(u) <= np.exp(log_a)
    return bool(res) if np.ndim(res) == 0 else res


def naive_adjusted_rejection(p_kernel: GaussianKernel, q_kernel: GaussianKernel, rng,
                             max_trials: int = 10**6):
    """Sample the residual r(x) ~ max(0, q(x) - p(x)) by rejection from q.

    Proposes x ~ q and accepts with probability 1 - min(1, p(x)/q(x)); the
    trial count is Geometric(TV(p, q)), which is what makes this baseline
    impractical as a speculative verifier.  Returns (sample, trials).

    Raises:
        BudgetExceededError: after ``max_trials`` proposals (p ~= q).
    """
    if q_kernel.sigma <= 0.0 or p_kernel.sigma <= 0.0:
        raise ValueError("kernels must be stochastic (sigma > 0)")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    d = q_kernel.d
    for trial in range(1, max_trials + 1):
        x = q_kernel.mean + q_kernel.sigma * rng.standard_normal(d)
        log_ratio = p_kernel.log_density(x) - q_kernel.log_density(x)
        accept_prob = 1.0 - np.exp(min(0.0, log_ratio))
        if rng.random() <= accept_prob:
            return x, trial
    raise BudgetExceededError(
        f"no residual sample within {max_trials} proposals; p and q are too close")


def temperature_mean_coefficient(delta_norm: float, tau: float) -> float:
    """Mean shift of the tempered coupling: E[Y] = m_q + C * (m_p - m_q).

    With d = ||Delta|| and kappa = exp(d^2 (1 - tau) / (2 tau^2)),

        C = Phi(-d/2) + kappa (1 - 2/tau) Phi(d (1/2 - 1/tau))
            + (2/d) (kappa phi(d (1/tau - 1/2)) - phi(d/2)).

    C = 0 at tau = 1 (exactness), C -> 1 as tau -> inf (always accept, so
    Y ~ N(m_p, .)), and C < 0 for tau < 1 (over-correction toward the
    target, the guidance reading).  This closed form is re-derived from the
    two one-dimensional half-line integrals of the accept/reflect split and
    matches quadrature and Monte Carlo; the printed constant it replaces
    drops a factor 1/2 in the exponent of kappa and mismatches both.
    """
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if delta_norm < 0.0:
        raise ValueError("delta_norm must be non-negative")
    if delta_norm <= DEGENERATE_TOL:
        return 0.0
    d = float(delta_norm)
    kappa = np.exp(d * d * (1.0 - tau) / (2.0 * tau * tau))
    a = d * (0.5 - 1.0 / tau)
    c = (
        norm_cdf(-0.5 * d)
        + kappa * (1.0 - 2.0 / tau) * norm_cdf(a)
        + (2.0 / d) * (kappa * norm_pdf(a) - norm_pdf(0.5 * d))
    )
    return float(c)
