"""Draft-window generation: frozen, independent, mixture and Picard drafts.

A draft window starting at step n proposes states for steps n+1 .. n_L where
n_L = min(n + L, K).  Every strategy produces Gaussian step kernels with the
same per-step std as the target, sigma_k = sqrt(gamma) eps g(1 - t_k); they
differ only in the kernel means:

    frozen:      m_k = y_k + gamma * b(t_n, y_n)          (one target eval)
    independent: m_k = y_k + gamma * b_draft(t_k, y_k)    (draft-model evals)
    mixture:     convex combination of component means
    picard:      m_k = F_k + gamma * b(t_k, F_k) where F is the (M-1)-fold
                 Picard iterate of the deterministic (eps = 0) Euler map
                 started from the constant extension of y_n.

Noise draws come from the caller's per-step keyed stream, so a window is a
pure function of (state, strategy, stream) and regenerating it is bitwise
reproducible.  Evaluators run on batches: y_start may be (B, d) with
per-chain start steps, which is how the engine drafts many chains at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .models import ScoreModel, drift
from .rng import ChainRng
from .schedule import TimeGrid

__all__ = [
    "DraftStrategy",
    "DraftWindow",
    "frozen_strategy",
    "independent_strategy",
    "mixture_strategy",
    "picard_strategy",
    "draft_frozen",
    "draft_independent",
    "draft_mixture",
    "draft_picard",
    "draft_window_batch",
]


@dataclass(frozen=True)
class DraftStrategy:
    """Drafting rule plus its parameters.

    ``kind`` is one of "frozen", "independent", "mixture", "picard".  The
    independent kind carries its own (cheap) score model; mixtures carry
    component strategies and convex weights; picard carries the inner
    iteration count M.  ``correction`` optionally adds a user-supplied term
    c(t_n, t_k, y_n, y_k) to the frozen drift.
    """

    kind: str
    draft_model: Optional[ScoreModel] = None
    components: Sequence["DraftStrategy"] = field(default_factory=tuple)
    weights: Optional[np.ndarray] = None
    picard_m: int = 1
    correction: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("frozen", "independent", "mixture", "picard"):
            raise ValueError(f"unknown draft strategy kind: {self.kind!r}")
        if self.kind == "independent" and self.draft_model is None:
            raise ValueError("independent drafting needs a draft score model")
        if self.kind == "picard" and self.picard_m < 1:
            raise ValueError(f"picard iteration count must be >= 1, got {self.picard_m}")
        if self.kind == "mixture":
            if not self.components:
                raise ValueError("mixture drafting needs component strategies")
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(self.components),):
                raise ValueError("one weight per mixture component required")
            if np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"mixture weights must be convex, got {w}")
            object.__setattr__(self, "weights", w)


def frozen_strategy(correction: Optional[Callable] = None) -> DraftStrategy:
    return DraftStrategy(kind="frozen", correction=correction)


def independent_strategy(draft_model: ScoreModel) -> DraftStrategy:
    return DraftStrategy(kind="independent", draft_model=draft_model)


def mixture_strategy(components: Sequence[DraftStrategy], weights) -> DraftStrategy:
    return DraftStrategy(kind="mixture", components=tuple(components), weights=weights)


def picard_strategy(M: int) -> DraftStrategy:
    return DraftStrategy(kind="picard", picard_m=M)


@dataclass(frozen=True)
class DraftWindow:
    """A drafted window: states, kernel means, per-step stds and its cost.

    Arrays are (ell, d) for a single chain or (B, ell, d) batched; row j
    corresponds to chain step start + 1 + j, and
    states[j] = kernel_means[j] + sigma_list[j] * z_{start+1+j}.

    Costs are per chain: ``target_evals_used`` and ``draft_evals_used`` are
    totals for this window; the flat/per-step split lets the engine account
    windows whose effective length differs from the padded batch length.
    ``first_mean_is_target`` marks windows (frozen drafting without a
    correction) whose first kernel mean is exactly the target kernel mean,
    so the verifier reuses the drafting evaluation.
    """

    start: np.ndarray
    states: np.ndarray
    kernel_means: np.ndarray
    sigma_list: np.ndarray
    target_evals_used: int
    draft_evals_used: int = 0
    target_evals_flat: int = 0
    target_evals_per_step: int = 0
    draft_evals_per_step: int = 0
    extra_parallel_rounds: int = 0
    first_mean_is_target: bool = False

    @property
    def length(self) -> int:
        return self.states.shape[-2]


class _MeanEvaluator:
    """Per-window kernel-mean evaluator; subclasses own their cost accounting.

    Target-model cost per chain is target_flat + target_per_step * ell.
    """

    target_flat = 0
    target_per_step = 0
    draft_per_step = 0
    extra_rounds = 0
    first_mean_is_target = False

    def begin(self, model, grid, start, y_start, ell, eps, t_prev):
        raise NotImplementedError

    def mean(self, j, t_prev_j, y_prev):
        """Kernel mean for window row j given the previous path state."""
        raise NotImplementedError


class _FrozenEvaluator(_MeanEvaluator):
    target_flat = 1

    def __init__(self, correction=None):
        self.correction = correction
        self.first_mean_is_target = correction is None

    def begin(self, model, grid, start, y_start, ell, eps, t_prev):
        self.gamma = grid.gamma
        self.t_start = grid.times[np.asarray(start)]
        self.y_start = y_start
        self.frozen_drift = drift(model, self.t_start, y_start, eps)

    def mean(self, j, t_prev_j, y_prev):
        b = self.frozen_drift
        if self.correction is not None:
            b = b + self.correction(self.t_start, t_prev_j, self.y_start, y_prev)
        return y_prev + self.gamma * b


class _IndependentEvaluator(_MeanEvaluator):
    draft_per_step = 1

    def __init__(self, draft_model):
        self.draft_model = draft_model

    def begin(self, model, grid, start, y_start, ell, eps, t_prev):
        self.gamma = grid.gamma
        self.eps = eps

    def mean(self, j, t_prev_j, y_prev):
        return y_prev + self.gamma * drift(self.draft_model, t_prev_j, y_prev, self.eps)


class _PicardEvaluator(_MeanEvaluator):
    def __init__(self, M):
        self.M = M
        self.target_per_step = M
        self.extra_rounds = M

    def begin(self, model, grid, start, y_start, ell, eps, t_prev):
        self.gamma = grid.gamma
        self.eps = eps
        self.model = model
        # Inner iterates of the eps = 0 (probability-flow) Euler map, from the
        # constant extension: after m sweeps the first m window rows agree
        # with the sequential deterministic rollout exactly.
        iterates = np.repeat(y_start[..., None, :], ell + 1, axis=-2)  # rows 0..ell
        for _ in range(self.M - 1):
            prev = iterates[..., :-1, :]
            flat = prev.reshape(-1, prev.shape[-1])
            t_flat = np.broadcast_to(t_prev, prev.shape[:-1]).reshape(-1)
            b = drift(self.model, t_flat, flat, 0.0).reshape(prev.shape)
            new = prev + self.gamma * b
            iterates = np.concatenate([iterates[..., :1, :], new], axis=-2)
        self.f_values = iterates  # row j holds F_{start+j}^{M-1}(y_start)

    def mean(self, j, t_prev_j, y_prev):
        f = self.f_values[..., j, :]
        return f + self.gamma * drift(self.model, t_prev_j, f, self.eps)


class _MixtureEvaluator(_MeanEvaluator):
    def __init__(self, components, weights):
        self.parts = [_make_evaluator(c) for c in components]
        self.weights = weights
        self.first_mean_is_target = all(p.first_mean_is_target for p in self.parts)
        self.target_flat = sum(p.target_flat for p in self.parts)
        self.target_per_step = sum(p.target_per_step for p in self.parts)
        self.draft_per_step = sum(p.draft_per_step for p in self.parts)
        self.extra_rounds = sum(p.extra_rounds for p in self.parts)

    def begin(self, model, grid, start, y_start, ell, eps, t_prev):
        for p in self.parts:
            p.begin(model, grid, start, y_start, ell, eps, t_prev)

    def mean(self, j, t_prev_j, y_prev):
        total = 0.0
        for w, p in zip(self.weights, self.parts):
            total = total + w * p.mean(j, t_prev_j, y_prev)
        return total


def _make_evaluator(strategy: DraftStrategy) -> _MeanEvaluator:
    if strategy.kind == "frozen":
        return _FrozenEvaluator(strategy.correction)
    if strategy.kind == "independent":
        return _IndependentEvaluator(strategy.draft_model)
    if strategy.kind == "picard":
        return _PicardEvaluator(strategy.picard_m)
    return _MixtureEvaluator(strategy.components, strategy.weights)


def window_sigmas(model: ScoreModel, grid: TimeGrid, step_prev) -> np.ndarray:
    """Per-step kernel stds sigma_k = sqrt(gamma) g(1 - t_k) (before the eps factor)."""
    t_prev = grid.times[step_prev]
    g2 = np.asarray(model.schedule.g2(np.minimum(1.0 - t_prev, model.schedule.t_clip)))
    return np.sqrt(grid.gamma) * np.sqrt(g2)


def draft_window_batch(model: ScoreModel, grid: TimeGrid, strategy: DraftStrategy,
                       start, y_start, eps: float, z_window) -> DraftWindow:
    """Draft a window for a batch of chains from pre-keyed noise.

    ``start`` is (B,) step indices, ``y_start`` (B, d) states and ``z_window``
    (B, ell, d) the per-step normals z_{start+1 .. start+ell}.  Step indices
    are clamped to the grid, so rows past a chain's n_L hold valid but unused
    numbers (the engine masks them).  Single-chain inputs (scalar start,
    (d,) state, (ell, d) noise) work the same way.
    """
    y_start = np.asarray(y_start, dtype=float)
    z_window = np.asarray(z_window, dtype=float)
    single = y_start.ndim == 1
    start = np.asarray(start, dtype=int)
    ell = z_window.shape[-2]
    if ell < 1:
        raise ValueError("window must contain at least one step")

    offs = np.arange(ell, dtype=int)
    step_prev = np.minimum(start[..., None] + offs, grid.K - 1)
    if single:
        step_prev = step_prev.reshape(ell)
    t_prev = grid.times[step_prev]
    sigmas = float(eps) * window_sigmas(model, grid, step_prev)

    evaluator = _make_evaluator(strategy)
    evaluator.begin(model, grid, start, y_start, ell, eps, t_prev)

    means = np.empty_like(z_window)
    states = np.empty_like(z_window)
    y_prev = y_start
    for j in range(ell):
        m = evaluator.mean(j, t_prev[..., j], y_prev)
        states_j = m + sigmas[..., j, None] * z_window[..., j, :]
        means[..., j, :] = m
        states[..., j, :] = states_j
        y_prev = states_j

    return DraftWindow(
        start=start,
        states=states,
        kernel_means=means,
        sigma_list=sigmas,
        target_evals_used=int(evaluator.target_flat + evaluator.target_per_step * ell),
        draft_evals_used=int(evaluator.draft_per_step * ell),
        target_evals_flat=int(evaluator.target_flat),
        target_evals_per_step=int(evaluator.target_per_step),
        draft_evals_per_step=int(evaluator.draft_per_step),
        extra_parallel_rounds=int(evaluator.extra_rounds),
        first_mean_is_target=evaluator.first_mean_is_target,
    )


def _window_from_stream(model, grid, strategy, n, y_n, L, eps, rng: ChainRng) -> DraftWindow:
    if L < 1:
        raise ValueError(f"window size must be >= 1, got {L}")
    if not 0 <= n < grid.K:
        raise ValueError(f"window start must satisfy 0 <= n < K={grid.K}, got {n}")
    y_n = np.asarray(y_n, dtype=float)
    ell = min(L, grid.K - n)
    steps = n + 1 + np.arange(ell)
    z = rng.step_normals(steps, y_n.shape[-1])  # (ell, d)
    return draft_window_batch(model, grid, strategy, n, y_n, eps, z)


def draft_frozen(model: ScoreModel, grid: TimeGrid, n: int, y_n, L: int, eps: float,
                 rng: ChainRng, correction: Optional[Callable] = None) -> DraftWindow:
    """Frozen-drift window: one target evaluation at (t_n, y_n) serves all steps.

    The first kernel mean coincides with the target kernel mean at (n, y_n),
    and that evaluation doubles as the verifier's m_q for step n + 1.
    """
    return _window_from_stream(model, grid, frozen_strategy(correction), n, y_n, L, eps, rng)


def draft_independent(draft_model: ScoreModel, grid: TimeGrid, n: int, y_n, L: int,
                      eps: float, rng: ChainRng) -> DraftWindow:
    """Sequential window from the cheap draft model's own drift."""
    return _window_from_stream(draft_model, grid, independent_strategy(draft_model),
                               n, y_n, L, eps, rng)


def draft_mixture(strategies: Sequence[DraftStrategy], weights, model: ScoreModel,
                  grid: TimeGrid, n: int, y_n, L: int, eps: float, rng: ChainRng) -> DraftWindow:
    """Window whose per-step kernel mean is the convex mix of component means."""
    return _window_from_stream(model, grid, mixture_strategy(strategies, weights),
                               n, y_n, L, eps, rng)


def draft_picard(model: ScoreModel, grid: TimeGrid, n: int, y_n, L: int, M: int,
                 eps: float, rng: ChainRng) -> DraftWindow:
    """Picard-iterated window: M - 1 deterministic sweeps, stochastic last step."""
    return _window_from_stream(model, grid, picard_strategy(M), n, y_n, L, eps, rng)
