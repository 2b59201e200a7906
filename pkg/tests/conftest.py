import numpy as np
import pytest

import specdiff as sd

trapz = getattr(np, "trapezoid", None) or np.trapz


@pytest.fixture(scope="session")
def sched():
    return sd.linear_schedule()


@pytest.fixture(scope="session")
def gmm_1d(sched):
    return sd.GmmSpec(weights=[0.3, 0.7], means=[[-1.0], [1.5]], stds=[0.4, 0.2])


@pytest.fixture(scope="session")
def gmm_2d():
    return sd.random_gmm(d=2, n_comp=4, rng=123)


@pytest.fixture(scope="session")
def model_1d(gmm_1d, sched):
    return sd.exact_score_model(gmm_1d, sched)


@pytest.fixture(scope="session")
def model_2d(gmm_2d, sched):
    return sd.exact_score_model(gmm_2d, sched)


def gaussian_pdf(x, mean, sigma):
    return np.exp(-0.5 * ((x - mean) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))


def tv_quadrature_1d(mean_p, mean_q, sigma, half_width=30.0, n=2_000_001):
    """Oracle: total variation of two 1D Gaussians by dense trapezoid rule."""
    center = 0.5 * (mean_p + mean_q)
    x = np.linspace(center - half_width * sigma, center + half_width * sigma, n)
    diff = np.abs(gaussian_pdf(x, mean_p, sigma) - gaussian_pdf(x, mean_q, sigma))
    return 0.5 * trapz(diff, x)
