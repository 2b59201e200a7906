"""Speculative sampling for time-discretized diffusion chains.

Draft a window of cheap candidate states, score their target transition
kernels in one parallel round, and accept/reject sequentially with a
reflection maximal coupling; the output chain is exactly distributed as the
target chain while needing far fewer batched target evaluations.
"""

from .analysis import (AcceptanceSample, CostModel, CostSummary, acceptance_lower_bound,
                       cost_ratio, diff_covariance_overlap, empirical_acceptance,
                       expected_advance, rejection_time_tail, simulate_advances)
from .coupling import (BudgetExceededError, CouplingOutcome, DiscreteDist,
                       discrete_maximal_coupling, encoder_reflection_coupling,
                       gaussian_tv, naive_adjusted_rejection,
                       projected_reflection_coupling, reflection_coupling,
                       temperature_mean_coefficient, tempered_reflection_coupling,
                       typical_acceptance)
from .drafting import (DraftStrategy, DraftWindow, draft_frozen, draft_independent,
                       draft_mixture, draft_picard, frozen_strategy,
                       independent_strategy, mixture_strategy, picard_strategy)
from .engine import CouplingConfig, RngStream, RunStats, rng_draws, run_speculative, run_target
from .metrics import SampleSet, ks_two_sample, sliced_wasserstein2, wasserstein2_1d
from .models import (GaussianKernel, GmmSpec, ScoreModel, custom_score_model, drift,
                     exact_score_model, gmm_log_density, gmm_score, gmm_velocity,
                     perturb_gmm, perturbed_score_model, random_gmm, sample_marginal,
                     score, score_from_velocity, target_kernel, velocity_from_score)
from .rng import ChainRng
from .schedule import Schedule, TimeGrid, eval_schedule, linear_schedule, make_grid

__version__ = "0.1.0"

__all__ = [
    "AcceptanceSample", "BudgetExceededError", "ChainRng", "CostModel", "CostSummary",
    "CouplingConfig", "CouplingOutcome", "DiscreteDist", "DraftStrategy", "DraftWindow",
    "GaussianKernel", "GmmSpec", "RngStream", "RunStats", "SampleSet", "Schedule",
    "ScoreModel", "TimeGrid", "acceptance_lower_bound", "cost_ratio", "custom_score_model",
    "diff_covariance_overlap", "discrete_maximal_coupling", "draft_frozen",
    "draft_independent", "draft_mixture", "draft_picard", "drift",
    "empirical_acceptance", "encoder_reflection_coupling", "eval_schedule",
    "exact_score_model", "expected_advance", "frozen_strategy", "gaussian_tv",
    "gmm_log_density", "gmm_score", "gmm_velocity", "independent_strategy",
    "ks_two_sample", "linear_schedule", "make_grid", "mixture_strategy",
    "naive_adjusted_rejection", "perturb_gmm", "perturbed_score_model",
    "picard_strategy", "projected_reflection_coupling", "random_gmm",
    "reflection_coupling", "rejection_time_tail", "rng_draws", "run_speculative",
    "run_target", "sample_marginal", "score", "score_from_velocity",
    "simulate_advances", "sliced_wasserstein2", "target_kernel",
    "temperature_mean_coefficient", "tempered_reflection_coupling",
    "typical_acceptance", "velocity_from_score", "wasserstein2_1d",
]
