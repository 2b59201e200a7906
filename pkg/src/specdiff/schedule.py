"""Noising interpolant, induced SDE coefficients and the discretization grid.

The forward noising interpolant is x_t = alpha(t) x_0 + sigma(t) x_1 with
x_1 ~ N(0, Id).  It induces a linear SDE dx = f(t) x dt + g(t) dB with

    f(t)   = d/dt log alpha(t),
    g(t)^2 = 2 alpha(t) sigma(t) d/dt (sigma(t) / alpha(t)).

For the linear interpolant alpha(t) = 1 - t, sigma(t) = t this gives
f(t) = -1/(1-t) and g(t)^2 = 2t/(1-t), which blow up as t -> 1.  All
reverse-time coefficient queries are therefore clamped to ``t_clip`` < 1;
the chain itself still runs on the full uniform grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["Schedule", "TimeGrid", "linear_schedule", "eval_schedule", "make_grid"]

DEFAULT_T_CLIP = 1.0 - 1e-3


@dataclass(frozen=True)
class Schedule:
    """Interpolant coefficients and induced SDE coefficients.

    Attributes:
        alpha: data coefficient, non-increasing with alpha(0) = 1.
        sigma: noise coefficient, non-decreasing with sigma(0) = 0.
        f: drift coefficient of the forward SDE.
        g2: squared diffusion coefficient, g2(t) >= 0 on [0, t_clip].
        t_clip: upper time cutoff; coefficient queries above it are invalid.
    """

    alpha: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]
    g2: Callable[[np.ndarray], np.ndarray]
    t_clip: float = DEFAULT_T_CLIP

    def __post_init__(self):
        if not 0.0 < self.t_clip < 1.0:
            raise ValueError(f"t_clip must lie in (0, 1), got {self.t_clip}")


def linear_schedule(t_clip: float = DEFAULT_T_CLIP) -> Schedule:
    """The linear interpolant: alpha(t) = 1 - t, sigma(t) = t."""
    return Schedule(
        alpha=lambda t: 1.0 - np.asarray(t, dtype=float),
        sigma=lambda t: np.asarray(t, dtype=float) + 0.0,
        f=lambda t: -1.0 / (1.0 - np.asarray(t, dtype=float)),
        g2=lambda t: 2.0 * np.asarray(t, dtype=float) / (1.0 - np.asarray(t, dtype=float)),
        t_clip=t_clip,
    )


def eval_schedule(s: Schedule, t):
    """Evaluate (alpha, sigma, f, g2) at time ``t``.

    ``t`` may be a scalar or an array; every entry must lie in [0, t_clip].

    Raises:
        ValueError: if any entry of ``t`` falls outside [0, t_clip].
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > s.t_clip):
        raise ValueError(f"schedule query outside [0, {s.t_clip}]: t={t}")
    vals = (s.alpha(t), s.sigma(t), s.f(t), s.g2(t))
    if t.ndim == 0:
        return tuple(float(v) for v in vals)
    return vals


@dataclass(frozen=True)
class TimeGrid:
    """Uniform discretization grid t_k = k / K shared by target and drafts."""

    K: int
    gamma: float
    times: np.ndarray = field(repr=False)
    t_clip: float = DEFAULT_T_CLIP

    def reverse_time(self, k):
        """Forward-scale time 1 - t_k, clamped to t_clip.

        The reverse chain at step k queries the schedule at 1 - t_k; near
        k = 0 that hits the t = 1 singularity of the linear schedule, so the
        query is clamped.
        """
        k = np.asarray(k)
        rev = 1.0 - self.times[k]
        return np.minimum(rev, self.t_clip)


def make_grid(K: int, t_clip: float = DEFAULT_T_CLIP) -> TimeGrid:
    """Build the uniform grid with K steps (K + 1 points, gamma = 1/K)."""
    if K < 1:
        raise ValueError(f"number of steps must be >= 1, got {K}")
    if not 0.0 < t_clip < 1.0:
        raise ValueError(f"t_clip must lie in (0, 1), got {t_clip}")
    gamma = 1.0 / K
    times = np.arange(K + 1, dtype=float) * gamma
    times[-1] = 1.0
    return TimeGrid(K=K, gamma=gamma, times=times, t_clip=t_clip)
