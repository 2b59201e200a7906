"""Analytic Gaussian-mixture targets, their noised scores and step kernels.

A mixture with weights w_i, means mu_i and isotropic stds s_i noised by the
interpolant has marginal

    p_t = sum_i w_i N(alpha_t mu_i, (alpha_t^2 s_i^2 + sigma_t^2) Id),

so score, density and velocity are available in closed form.  All mixture
computations run in log space (log-sum-exp) so that small component stds do
not underflow.

The reverse chain's one-step transition is Gaussian:

    mean  = y + gamma * b_t(y),       std = sqrt(gamma) * eps * g(1 - t),
    b_t(y) = -f(1-t) y + (1 + eps^2)/2 * g(1-t)^2 * score(1-t, y),

with all reverse-time coefficient queries clamped to the schedule's t_clip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .schedule import Schedule, TimeGrid

__all__ = [
    "GmmSpec",
    "GaussianKernel",
    "ScoreModel",
    "random_gmm",
    "perturb_gmm",
    "exact_score_model",
    "perturbed_score_model",
    "custom_score_model",
    "gmm_log_density",
    "gmm_score",
    "gmm_velocity",
    "score",
    "drift",
    "score_from_velocity",
    "velocity_from_score",
    "target_kernel",
    "sample_marginal",
]

# Rows per chunk when evaluating mixtures on large batches; bounds the
# (rows, n_comp, d) temporary at ~tens of MB.
_CHUNK_ROWS = 32768


@dataclass(frozen=True)
class GmmSpec:
    """Isotropic Gaussian mixture: weights, means and per-component stds."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "means", np.atleast_2d(np.asarray(self.means, dtype=float)))
        object.__setattr__(self, "stds", np.asarray(self.stds, dtype=float))
        if self.means.ndim != 2:
            raise ValueError("means must be an (n_comp, d) array")
        n = self.means.shape[0]
        if self.weights.shape != (n,) or self.stds.shape != (n,):
            raise ValueError("weights, means and stds must agree on n_comp")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {self.weights.sum()!r}")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be non-negative")
        if np.any(self.stds <= 0.0):
            raise ValueError("component stds must be positive")

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def n_comp(self) -> int:
        return self.means.shape[0]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GmmSpec":
        spec = cls(weights=obj["weights"], means=obj["means"], stds=obj["stds"])
        if "d" in obj and int(obj["d"]) != spec.d:
            raise ValueError(f"declared dimension {obj['d']} != means dimension {spec.d}")
        return spec

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GmmSpec":
        return cls.from_dict(json.loads(text))


def random_gmm(d: int, n_comp: int, rng) -> GmmSpec:
    """Random mixture with means ~ U[-2, 2]^d and stds ~ U[0.1, 0.2].

    Weights are uniform (the experiments never pin them down otherwise).
    ``rng`` is a numpy Generator or a seed.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    means = rng.uniform(-2.0, 2.0, size=(n_comp, d))
    stds = rng.uniform(0.1, 0.2, size=n_comp)
    weights = np.full(n_comp, 1.0 / n_comp)
    return GmmSpec(weights=weights, means=means, stds=stds)


def perturb_gmm(gmm: GmmSpec, mean_jitter_std: float, rng) -> GmmSpec:
    """Jitter component means with Gaussian noise; the cheap 'draft-quality' mixture."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    offsets = mean_jitter_std * rng.standard_normal(gmm.means.shape)
    return replace(gmm, means=gmm.means + offsets)


@dataclass(frozen=True)
class GaussianKernel:
    """One-step transition N(mean, sigma^2 Id)."""

    mean: np.ndarray
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        if not np.all(np.isfinite(self.mean)) or not np.isfinite(self.sigma):
            raise FloatingPointError("kernel parameters must be finite")

    @property
    def d(self) -> int:
        return self.mean.shape[-1]

    def log_density(self, x) -> np.ndarray:
        """Log N(x; mean, sigma^2 Id); requires sigma > 0."""
        if self.sigma <= 0.0:
            raise ValueError("log_density undefined for a deterministic (sigma=0) kernel")
        x = np.asarray(x, dtype=float)
        sq = np.sum((x - self.mean) ** 2, axis=-1)
        d = self.mean.shape[-1]
        return -0.5 * sq / self.sigma**2 - 0.5 * d * np.log(2.0 * np.pi * self.sigma**2)


@dataclass(frozen=True)
class ScoreModel:
    """A score oracle: an exact GMM, a perturbed copy, or a user callable.

    Immutable after construction; every evaluation is pure, so instances can
    be shared freely across threads.
    """

    kind: str
    schedule: Schedule
    gmm: Optional[GmmSpec] = None
    mean_offsets: Optional[np.ndarray] = field(default=None, repr=False)
    score_fn: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("exact_gmm", "perturbed_gmm", "custom"):
            raise ValueError(f"unknown score model kind: {self.kind!r}")
        if self.kind == "custom":
            if self.score_fn is None:
                raise ValueError("custom score model needs a score_fn(t, x)")
        elif self.gmm is None:
            raise ValueError(f"{self.kind} score model needs a GmmSpec")
        if self.mean_offsets is not None:
            offsets = np.asarray(self.mean_offsets, dtype=float)
            if offsets.shape != self.gmm.means.shape:
                raise ValueError("mean_offsets must match the mixture means' shape")
            object.__setattr__(self, "mean_offsets", offsets)

    @property
    def effective_gmm(self) -> GmmSpec:
        """Mixture actually evaluated (base means plus any perturbation)."""
        if self.gmm is None:
            raise ValueError("custom score model has no mixture")
        if self.mean_offsets is None:
            return self.gmm
        return replace(self.gmm, means=self.gmm.means + self.mean_offsets)


def exact_score_model(gmm: GmmSpec, schedule: Schedule) -> ScoreModel:
    return ScoreModel(kind="exact_gmm", schedule=schedule, gmm=gmm)


def perturbed_score_model(base: ScoreModel, mean_jitter_std: float, rng) -> ScoreModel:
    """Draft-quality model: same mixture with jittered component means."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    offsets = mean_jitter_std * rng.standard_normal(base.gmm.means.shape)
    return ScoreModel(
        kind="perturbed_gmm", schedule=base.schedule, gmm=base.gmm, mean_offsets=offsets
    )


def custom_score_model(score_fn: Callable, schedule: Schedule) -> ScoreModel:
    return ScoreModel(kind="custom", schedule=schedule, score_fn=score_fn)


def _check_time(model: ScoreModel, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > model.schedule.t_clip):
        raise ValueError(f"time outside [0, {model.schedule.t_clip}]: {t}")
    return t


def _mixture_moments(model: ScoreModel, t: np.ndarray):
    """Per-component noised means alpha_t mu_i and variances alpha^2 s_i^2 + sigma_t^2."""
    gmm = model.effective_gmm
    alpha = np.asarray(model.schedule.alpha(t), dtype=float)
    sig = np.asarray(model.schedule.sigma(t), dtype=float)
    var = alpha[..., None] ** 2 * gmm.stds**2 + sig[..., None] ** 2  # (..., n)
    return gmm, alpha, var


def _log_posterior_terms(gmm, alpha, var, x):
    """Log of w_i N(x; alpha mu_i, var_i Id) for a (B, d) batch; returns (B, n)."""
    diff = x[:, None, :] - alpha[..., None, None] * gmm.means[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    d = gmm.d
    logw = np.log(gmm.weights)[None, :] - 0.5 * sq / var - 0.5 * d * np.log(2.0 * np.pi * var)
    return logw, diff


def _batched(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite evaluation point")
    single = x.ndim == 1
    return (x[None, :] if single else x), single


def gmm_log_density(model: ScoreModel, t, x):
    """Exact log density of the noised mixture marginal at time ``t``."""
    t = _check_time(model, t)
    x, single = _batched(x)
    out = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], _CHUNK_ROWS):
        hi = min(lo + _CHUNK_ROWS, x.shape[0])
        tc = t if t.ndim == 0 else t[lo:hi]
        gmm, alpha, var = _mixture_moments(model, tc)
        logw, _ = _log_posterior_terms(gmm, alpha, var, x[lo:hi])
        m = logw.max(axis=1, keepdims=True)
        out[lo:hi] = (m + np.log(np.sum(np.exp(logw - m), axis=1, keepdims=True))).ravel()
    return float(out[0]) if single else out


def gmm_score(model: ScoreModel, t, x):
    """Score of the noised mixture: posterior-weighted component scores.

    grad log p_t(x) = sum_i post_i(x) * (alpha mu_i - x) / var_i with the
    posterior weights computed by log-sum-exp.
    """
    t = _check_time(model, t)
    x, single = _batched(x)
    out = np.empty_like(x)
    for lo in range(0, x.shape[0], _CHUNK_ROWS):
        hi = min(lo + _CHUNK_ROWS, x.shape[0])
        tc = t if t.ndim == 0 else t[lo:hi]
        gmm, alpha, var = _mixture_moments(model, tc)
        logw, diff = _log_posterior_terms(gmm, alpha, var, x[lo:hi])
        logw -= logw.max(axis=1, keepdims=True)
        post = np.exp(logw)
        post /= post.sum(axis=1, keepdims=True)
        out[lo:hi] = np.sum(post[:, :, None] * (-diff / var[..., None]), axis=1)
    return out[0] if single else out


def gmm_velocity(model: ScoreModel, t, x, dalpha: float = -1.0, dsigma: float = 1.0):
    """Interpolant velocity E[dalpha X0 + dsigma X1 | X_t = x] for the mixture.

    The per-component posterior of X0 given X_t is Gaussian with mean
    mu_i + alpha s_i^2 / var_i * (x - alpha mu_i); X1 follows from
    X1 = (x - alpha X0) / sigma_t.  Defaults are the linear-schedule
    derivatives d alpha/dt = -1, d sigma/dt = 1.
    """
    t = _check_time(model, t)
    sig = float(model.schedule.sigma(t))
    if sig <= 0.0:
        raise ValueError("velocity via X1-posterior needs sigma_t > 0 (t > 0)")
    x, single = _batched(x)
    gmm, alpha, var = _mixture_moments(model, t)
    logw, diff = _log_posterior_terms(gmm, alpha, var, x)
    logw -= logw.max(axis=1, keepdims=True)
    post = np.exp(logw)
    post /= post.sum(axis=1, keepdims=True)
    # E[X0 | x, comp i]; diff = x - alpha mu_i
    shrink = (alpha[..., None] * gmm.stds**2 / var)[..., :, None]
    e_x0 = gmm.means[None, :, :] + shrink * diff
    e_x0 = np.sum(post[:, :, None] * e_x0, axis=1)
    e_x1 = (x - alpha[..., None] * e_x0) / sig
    v = dalpha * e_x0 + dsigma * e_x1
    return v[0] if single else v


def score(model: ScoreModel, t, x):
    """Model score at forward time ``t`` (dispatches custom callables)."""
    if model.kind == "custom":
        _check_time(model, t)
        return model.score_fn(t, np.asarray(x, dtype=float))
    return gmm_score(model, t, x)


def drift(model: ScoreModel, t, x, eps: float):
    """Reverse-chain drift b_t(x) = -f(1-t) x + (1+eps^2)/2 g(1-t)^2 s(1-t, x).

    ``t`` is chain time in [0, 1]; the coefficient query at 1 - t is clamped
    to the schedule's t_clip.  Scalar or per-row array ``t`` are accepted.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    rev = np.minimum(1.0 - t, model.schedule.t_clip)
    f = np.asarray(model.schedule.f(rev), dtype=float)
    g2 = np.asarray(model.schedule.g2(rev), dtype=float)
    s = score(model, rev, x)
    coef = 0.5 * (1.0 + eps * eps)
    if x.ndim == 1:
        return -float(f) * x + coef * float(g2) * s
    return -f[..., None] * x + coef * g2[..., None] * s


def score_from_velocity(v, x, t, s: Schedule):
    """Recover the score from the velocity: s = (2/g^2) (f x - v)."""
    g2 = float(s.g2(_check_domain(s, t)))
    if g2 <= 0.0:
        raise ValueError(f"score-velocity conversion needs g(t)^2 > 0, got t={t}")
    f = float(s.f(t))
    return (2.0 / g2) * (f * np.asarray(x, dtype=float) - np.asarray(v, dtype=float))


def velocity_from_score(sc, x, t, s: Schedule):
    """Inverse of :func:`score_from_velocity`: v = f x - (g^2 / 2) s."""
    t = _check_domain(s, t)
    f = float(s.f(t))
    g2 = float(s.g2(t))
    return f * np.asarray(x, dtype=float) - 0.5 * g2 * np.asarray(sc, dtype=float)


def _check_domain(s: Schedule, t: float) -> float:
    if not 0.0 <= t <= s.t_clip:
        raise ValueError(f"time outside [0, {s.t_clip}]: {t}")
    return float(t)


def target_kernel(model: ScoreModel, grid: TimeGrid, k: int, y_k, eps: float) -> GaussianKernel:
    """One-step target kernel at step index k: N(y + gamma b_{t_k}(y), sigma_k^2 Id).

    sigma_k = sqrt(gamma) eps g(1 - t_k); eps = 0 yields a deterministic
    kernel (sigma = 0), which the couplings refuse.
    """
    if not 0 <= k < grid.K:
        raise ValueError(f"step index must satisfy 0 <= k < K={grid.K}, got {k}")
    y_k = np.asarray(y_k, dtype=float)
    t_k = grid.times[k]
    mean = y_k + grid.gamma * drift(model, t_k, y_k, eps)
    g2 = float(model.schedule.g2(grid.reverse_time(k)))
    sigma = np.sqrt(grid.gamma) * eps * np.sqrt(g2)
    return GaussianKernel(mean=mean, sigma=float(sigma))


def sample_marginal(model: ScoreModel, t: float, n: int, rng) -> np.ndarray:
    """Exact samples from the noised mixture marginal at forward time ``t``."""
    t = float(_check_time(model, t))
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    gmm, alpha, var = _mixture_moments(model, np.asarray(t))
    idx = rng.choice(gmm.n_comp, size=n, p=gmm.weights)
    sd = np.sqrt(var[idx])
    return float(alpha) * gmm.means[idx] + sd[:, None] * rng.standard_normal((n, gmm.d))
