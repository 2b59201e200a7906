"""Distributional comparison tools: 1D/sliced Wasserstein-2 and the KS test."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .special import kolmogorov_sf

__all__ = ["SampleSet", "wasserstein2_1d", "sliced_wasserstein2", "ks_two_sample"]


@dataclass(frozen=True)
class SampleSet:
    """Labeled (n, d) sample matrix."""

    data: np.ndarray
    label: str = ""

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if not np.all(np.isfinite(data)):
            raise ValueError(f"sample set {self.label!r} contains non-finite entries")
        object.__setattr__(self, "data", data)


def _as_matrix(a) -> np.ndarray:
    if isinstance(a, SampleSet):
        return a.data
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def wasserstein2_1d(a, b) -> float:
    """Exact W2 between 1D empirical measures via the quantile coupling.

    Equal sizes pair order statistics directly; otherwise both quantile
    functions are evaluated on the midpoint grid of the larger size.
    """
    xa = _as_matrix(a).ravel()
    xb = _as_matrix(b).ravel()
    if xa.size == 0 or xb.size == 0:
        raise ValueError("empty sample set")
    if xa.size == xb.size:
        qa = np.sort(xa)
        qb = np.sort(xb)
    else:
        q = (np.arange(max(xa.size, xb.size)) + 0.5) / max(xa.size, xb.size)
        qa = np.quantile(xa, q)
        qb = np.quantile(xb, q)
    return float(np.sqrt(np.mean((qa - qb) ** 2)))


def sliced_wasserstein2(a, b, n_proj: int = 128, rng=None) -> float:
    """Root-mean of squared 1D W2 over random unit projections.

    A d > 1 stand-in for W2; deterministic given the generator state.
    """
    xa = _as_matrix(a)
    xb = _as_matrix(b)
    if xa.shape[1] != xb.shape[1]:
        raise ValueError("sample sets must share a dimension")
    d = xa.shape[1]
    if d == 1:
        return wasserstein2_1d(xa, xb)
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    dirs = rng.standard_normal((n_proj, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    total = 0.0
    for v in dirs:
        total += wasserstein2_1d(xa @ v, xb @ v) ** 2
    return float(np.sqrt(total / n_proj))


def ks_two_sample(a_coord, b_coord):
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.

    Returns (statistic, p_value); the p-value uses the Kolmogorov survival
    function with the usual finite-sample argument correction.
    """
    x = np.sort(np.asarray(a_coord, dtype=float).ravel())
    y = np.sort(np.asarray(b_coord, dtype=float).ravel())
    n1, n2 = x.size, y.size
    if n1 == 0 or n2 == 0:
        raise ValueError("empty sample set")
    if min(n1, n2) < 10:
        warnings.warn("KS test with fewer than 10 samples is unreliable", stacklevel=2)
    both = np.concatenate([x, y])
    cdf1 = np.searchsorted(x, both, side="right") / n1
    cdf2 = np.searchsorted(y, both, side="right") / n2
    stat = float(np.max(np.abs(cdf1 - cdf2)))
    en = np.sqrt(n1 * n2 / (n1 + n2))
    p = kolmogorov_sf((en + 0.12 + 0.11 / en) * stat)
    return stat, p
