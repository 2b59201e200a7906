"""The speculative sampling loop and the plain target chain.

Chains evolve by Gaussian steps Y_{k} = m(Y_{k-1}) + sigma_{k-1} Z_k.  The
speculative runner drafts a window of candidate states, computes the target
kernel means at the drafted states in one batched round, scans the window
with a coupling kernel and advances to the first rejection (consuming the
reflected state there) or past the window if everything is accepted.

Randomness contract: the normal draw for chain step k always comes from the
keyed stream (seed, chain, k, SUB_NOISE) and the acceptance uniform from
(seed, chain, k, SUB_UNIF), for every strategy and window size.  Draws
attached to drafted-but-discarded steps are reused by the re-draft; nothing
observable depends on them at the time they are discarded, so the chain's
law is unchanged while trajectories become independent of window boundaries,
verification batching and thread count.

NFE convention: ``nfe_parallel`` counts batched target-evaluation rounds
(one per window, plus the inner rounds of Picard drafting) and ``nfe_total``
counts individual target drift evaluations; a frozen window's single
drafting evaluation is reused as the verifier's first kernel mean, so a
frozen window costs one round and ``window length`` total evaluations.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coupling import DEGENERATE_TOL
from .drafting import DraftStrategy, draft_window_batch
from .models import ScoreModel, drift
from .rng import (SUB_INIT, SUB_NOISE, SUB_UNIF, RngStream,  # noqa: F401
                  keyed_normals, keyed_uniforms, rng_draws)
from .schedule import TimeGrid

__all__ = ["CouplingConfig", "RunStats", "run_target", "run_speculative",
           "RngStream", "rng_draws"]

# Chains are processed in fixed-size blocks; the partition never depends on
# the worker count, so outputs are identical for any --threads value.
_BLOCK = 4096


@dataclass(frozen=True)
class CouplingConfig:
    """Verification rule used by the engine.

    variant "reflection" is the (tempered) reflection maximal coupling; tau=1
    is exact.  variant "typical" accepts by the density-threshold rule and
    falls back to the reflected target draw on rejection.
    """

    variant: str = "reflection"
    tau: float = 1.0
    kappa: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        if self.variant not in ("reflection", "typical"):
            raise ValueError(f"unknown coupling variant: {self.variant!r}")
        if self.tau <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.kappa <= 0.0 or self.delta <= 0.0:
            raise ValueError("kappa and delta must be positive")


@dataclass
class RunStats:
    """Counters and outputs of one run (totals are summed over chains)."""

    kind: str
    n_chains: int
    K: int
    d: int
    seed: int
    nfe_parallel: int = 0
    nfe_total: int = 0
    nfe_draft: int = 0
    accept_attempts: np.ndarray = field(default=None, repr=False)
    accept_counts: np.ndarray = field(default=None, repr=False)
    advances: np.ndarray = field(default=None, repr=False)
    advance_sum_per_chain: np.ndarray = field(default=None, repr=False)
    samples: np.ndarray = field(default=None, repr=False)
    wall_clock: float = 0.0

    @property
    def mean_nfe_parallel(self) -> float:
        return self.nfe_parallel / self.n_chains

    @property
    def mean_nfe_total(self) -> float:
        return self.nfe_total / self.n_chains

    @property
    def mean_nfe_draft(self) -> float:
        return self.nfe_draft / self.n_chains

    @property
    def acceptance_rate(self) -> float:
        att = int(self.accept_attempts.sum())
        return float(self.accept_counts.sum()) / att if att else float("nan")

    @property
    def mean_advance(self) -> float:
        return float(np.mean(self.advances)) if self.advances.size else float("nan")

    def per_step_acceptance(self) -> np.ndarray:
        """Empirical acceptance rate per chain step (nan where never attempted)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.accept_attempts > 0,
                            self.accept_counts / np.maximum(self.accept_attempts, 1),
                            np.nan)

    def to_dict(self) -> dict:
        """JSON-ready summary; excludes wall-clock so reports are reproducible."""
        return {
            "kind": self.kind,
            "n_chains": self.n_chains,
            "K": self.K,
            "d": self.d,
            "seed": self.seed,
            "nfe_parallel": self.nfe_parallel,
            "nfe_total": self.nfe_total,
            "nfe_draft": self.nfe_draft,
            "mean_nfe_parallel": self.mean_nfe_parallel,
            "mean_nfe_total": self.mean_nfe_total,
            "mean_nfe_draft": self.mean_nfe_draft,
            "acceptance_rate": None if np.isnan(self.acceptance_rate) else self.acceptance_rate,
            "mean_advance": None if np.isnan(self.mean_advance) else self.mean_advance,
            "advance_histogram": np.bincount(self.advances.astype(int)).tolist()
            if self.advances.size else [],
        }


def _blocks(n_chains: int):
    return [(lo, min(lo + _BLOCK, n_chains)) for lo in range(0, n_chains, _BLOCK)]


def _merge(kind, n_chains, K, d, seed, parts, elapsed) -> RunStats:
    stats = RunStats(kind=kind, n_chains=n_chains, K=K, d=d, seed=seed)
    stats.accept_attempts = np.zeros(K, dtype=np.int64)
    stats.accept_counts = np.zeros(K, dtype=np.int64)
    advances = []
    adv_sums = []
    samples = []
    for part in parts:
        stats.nfe_parallel += part["nfe_parallel"]
        stats.nfe_total += part["nfe_total"]
        stats.nfe_draft += part["nfe_draft"]
        stats.accept_attempts += part["attempts"]
        stats.accept_counts += part["accepts"]
        advances.append(part["advances"])
        adv_sums.append(part["advance_sums"])
        samples.append(part["samples"])
    stats.advances = np.concatenate(advances) if advances else np.zeros(0, dtype=np.int64)
    stats.advance_sum_per_chain = np.concatenate(adv_sums)
    stats.samples = np.concatenate(samples, axis=0)
    stats.wall_clock = elapsed
    return stats


def _run_blocks(worker, kind, model, grid, n_chains, seed, threads) -> RunStats:
    t0 = time.perf_counter()
    blocks = _blocks(n_chains)
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(worker, blocks))
    else:
        parts = [worker(b) for b in blocks]
    d = model.effective_gmm.d if model.gmm is not None else parts[0]["samples"].shape[1]
    return _merge(kind, n_chains, grid.K, d, seed, parts, time.perf_counter() - t0)


def run_target(model: ScoreModel, grid: TimeGrid, eps: float, n_chains: int, seed: int,
               chain_offset: int = 0, d: int | None = None, threads: int = 1) -> RunStats:
    """Simulate the plain target chain: Y_0 ~ N(0, Id), K Euler steps.

    eps = 0 gives the deterministic probability-flow path.  One target drift
    evaluation per step per chain, so nfe_parallel = nfe_total = K per chain.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    dim = d if d is not None else model.effective_gmm.d
    K = grid.K

    def worker(block):
        lo, hi = block
        ids = np.arange(chain_offset + lo, chain_offset + hi, dtype=np.uint32)
        y = keyed_normals(seed, ids, 0, SUB_INIT, dim)
        for k in range(1, K + 1):
            t_prev = grid.times[k - 1]
            sigma = np.sqrt(grid.gamma) * eps * np.sqrt(
                float(model.schedule.g2(grid.reverse_time(k - 1))))
            mean = y + grid.gamma * drift(model, t_prev, y, eps)
            z = keyed_normals(seed, ids, k, SUB_NOISE, dim)
            y = mean + sigma * z
        n_block = hi - lo
        return {
            "nfe_parallel": K * n_block,
            "nfe_total": K * n_block,
            "nfe_draft": 0,
            "attempts": np.zeros(K, dtype=np.int64),
            "accepts": np.zeros(K, dtype=np.int64),
            "advances": np.zeros(0, dtype=np.int64),
            "advance_sums": np.full(n_block, K, dtype=np.int64),
            "samples": y,
        }

    stats = _run_blocks(worker, "target", model, grid, n_chains, seed, threads)
    stats.d = dim
    return stats


def run_speculative(model: ScoreModel, grid: TimeGrid, strategy: DraftStrategy,
                    coupling: CouplingConfig, L: int, eps: float, n_chains: int,
                    seed: int, chain_offset: int = 0, d: int | None = None,
                    threads: int = 1) -> RunStats:
    """Draft-and-verify simulation of the target chain.

    With tau = 1 and the reflection variant the output law equals the target
    chain's law for any drafting strategy.  eps must be positive: couplings
    require a stochastic kernel.
    """
    if eps <= 0.0:
        raise ValueError("speculative sampling needs eps > 0 (deterministic samplers unsupported)")
    if L < 1:
        raise ValueError(f"window size must be >= 1, got {L}")
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    dim = d if d is not None else model.effective_gmm.d
    K = grid.K
    offs = np.arange(L)

    def worker(block):
        lo, hi = block
        n_block = hi - lo
        ids = np.arange(chain_offset + lo, chain_offset + hi, dtype=np.uint32)
        y = keyed_normals(seed, ids, 0, SUB_INIT, dim)
        pos = np.zeros(n_block, dtype=np.int64)
        attempts = np.zeros(K, dtype=np.int64)
        accepts = np.zeros(K, dtype=np.int64)
        advance_rounds = []
        nfe_parallel = 0
        nfe_total = 0
        nfe_draft = 0

        active = pos < K
        while np.any(active):
            act = np.flatnonzero(active)
            ids_a = ids[act]
            y_a = y[act]
            n_a = pos[act]
            ell_eff = np.minimum(L, K - n_a)
            steps = n_a[:, None] + 1 + offs  # chain step of window row j
            z = keyed_normals(seed, ids_a[:, None], steps.astype(np.uint32), SUB_NOISE, dim)
            u = keyed_uniforms(seed, ids_a[:, None], steps.astype(np.uint32), SUB_UNIF, 1)[..., 0]

            window = draft_window_batch(model, grid, strategy, n_a, y_a, eps, z)
            sigma = window.sigma_list  # (B, L)

            # One batched round of target kernel means at the drafted states.
            path_prev = np.concatenate([y_a[:, None, :], window.states[:, :-1, :]], axis=1)
            t_prev = grid.times[np.minimum(steps - 1, K - 1)]
            bq = drift(model, t_prev.reshape(-1), path_prev.reshape(-1, dim), eps)
            m_q = path_prev + grid.gamma * bq.reshape(path_prev.shape)
            if window.first_mean_is_target:
                # The frozen drafting evaluation doubles as m_q for step n+1.
                m_q[:, 0, :] = window.kernel_means[:, 0, :]

            delta = (window.kernel_means - m_q) / sigma[..., None]
            dn2 = np.sum(delta * delta, axis=-1)
            degenerate = dn2 <= DEGENERATE_TOL**2

            if coupling.variant == "reflection":
                log_ratio = (-np.sum(z * delta, axis=-1) - 0.5 * dn2) / coupling.tau
                accept = u <= np.exp(np.minimum(log_ratio, 0.0))
                accept |= degenerate
            else:  # typical acceptance
                sq = np.sum((window.states - m_q) ** 2, axis=-1)
                logq = -0.5 * sq / sigma**2 - 0.5 * dim * np.log(2.0 * np.pi * sigma**2)
                ent = 0.5 * dim * (1.0 + np.log(2.0 * np.pi) + sigma**2)
                log_a = np.minimum(0.0, np.maximum(logq - np.log(coupling.kappa),
                                                   logq + ent - np.log(coupling.delta)))
                accept = u <= np.exp(log_a)

            in_window = offs[None, :] < ell_eff[:, None]
            rejected = (~accept) & in_window
            any_rej = rejected.any(axis=1)
            first_rej = np.where(any_rej, np.argmax(rejected, axis=1), 0)
            advance = np.where(any_rej, first_rej + 1, ell_eff)

            rows = np.arange(act.size)
            j_last = advance - 1
            # Reflected draw at the rejected step (unused rows masked below).
            z_j = z[rows, j_last]
            d_j = delta[rows, j_last]
            mq_j = m_q[rows, j_last]
            s_j = sigma[rows, j_last]
            dn2_j = dn2[rows, j_last]
            safe = dn2_j > DEGENERATE_TOL**2
            coef = np.where(safe, 2.0 * np.sum(z_j * d_j, axis=1) / np.where(safe, dn2_j, 1.0), 0.0)
            y_reflect = mq_j + s_j[:, None] * (z_j - coef[:, None] * d_j)
            # Degenerate rejection (typical rule with Delta ~ 0): point-reflect.
            y_reflect = np.where((any_rej & ~safe)[:, None], mq_j - s_j[:, None] * z_j, y_reflect)
            y_final = np.where(any_rej[:, None], y_reflect,
                               window.states[rows, ell_eff - 1])

            verified = offs[None, :] < advance[:, None]
            np.add.at(attempts, (steps - 1)[verified], 1)
            np.add.at(accepts, (steps - 1)[verified & accept], 1)

            nfe_parallel += act.size * (1 + window.extra_parallel_rounds)
            reuse = 1 if window.first_mean_is_target else 0
            nfe_total += int(np.sum(window.target_evals_flat
                                    + window.target_evals_per_step * ell_eff
                                    + (ell_eff - reuse)))
            nfe_draft += int(np.sum(window.draft_evals_per_step * ell_eff))

            advance_rounds.append(advance.astype(np.int64))
            y[act] = y_final
            pos[act] = n_a + advance
            active = pos < K

        return {
            "nfe_parallel": nfe_parallel,
            "nfe_total": nfe_total,
            "nfe_draft": nfe_draft,
            "attempts": attempts,
            "accepts": accepts,
            "advances": np.concatenate(advance_rounds) if advance_rounds
            else np.zeros(0, dtype=np.int64),
            "advance_sums": pos.copy(),
            "samples": y,
        }

    stats = _run_blocks(worker, "speculative", model, grid, n_chains, seed, threads)
    stats.d = dim
    return stats
