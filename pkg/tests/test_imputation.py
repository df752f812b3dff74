"""
Tests for the conditional algebra behind cluster covariate imputation.

The posterior of a missing C_kj is checked against a brute-force numerical
integration of likelihood times conditional prior.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from hlm_backend.design import build_design_vector
from hlm_backend.errors import SamplerError, SpecificationError
from hlm_backend.imputation import (
    compute_mu1_mu2,
    conditional_moments_all,
    conditional_moments_c,
    mu_decomposition,
    posterior_c_kj,
    posterior_from_sums,
)
from hlm_backend.models import HlmSpec, Parameters

from conftest import random_spec

BASELINE_T = np.array([[1.25, -0.5], [-0.5, 1.0]])


# ==============================================================================
# CONDITIONAL PRIOR
# ==============================================================================

class TestConditionalMoments:
    """Gaussian conditional of one covariate given the others."""

    def test_worked_example(self):
        moments = conditional_moments_c(0, [2.0], np.zeros(4), BASELINE_T, [1.0])
        assert moments.mean == pytest.approx(-1.0)
        assert moments.variance == pytest.approx(1.0)

    def test_single_covariate_is_the_marginal(self):
        moments = conditional_moments_c(0, [], np.array([0.5, 2.0]), [[3.0]], [1.5])
        assert moments.mean == pytest.approx(3.5)
        assert moments.variance == pytest.approx(3.0)

    def test_diagonal_T_ignores_other_components(self):
        alpha = np.array([1.0, 0.0, 2.0, 0.0, -1.0, 0.0])
        T = np.diag([2.0, 3.0, 4.0])
        moments = conditional_moments_c(1, [100.0, -100.0], alpha, T, [0.3])
        assert moments.mean == pytest.approx(2.0)
        assert moments.variance == pytest.approx(3.0)

    def test_vectorised_matches_single(self):
        rng = np.random.default_rng(2)
        A = rng.normal(size=(3, 3))
        T = A @ A.T + np.eye(3)
        c = rng.normal(size=(6, 3))
        means = rng.normal(size=(6, 3))
        mean, variance = conditional_moments_all(2, c, means, T)
        for j in range(6):
            w = np.linalg.solve(T[:2, :2], T[:2, 2])
            assert mean[j] == pytest.approx(means[j, 2] + (c[j, :2] - means[j, :2]) @ w)
        assert variance == pytest.approx(T[2, 2] - T[2, :2] @ np.linalg.solve(T[:2, :2], T[:2, 2]))

    def test_wrong_length_raises(self):
        with pytest.raises(SpecificationError):
            conditional_moments_c(0, [1.0, 2.0], np.zeros(4), BASELINE_T, [1.0])

    def test_singular_block_raises(self):
        T = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
        with pytest.raises(SamplerError):
            conditional_moments_all(0, np.zeros((1, 3)), np.zeros((1, 3)), T)


# ==============================================================================
# PREDICTOR DECOMPOSITION
# ==============================================================================

class TestMuDecomposition:
    """mu1 + mu2 * C_k reproduces the full predictor."""

    def test_worked_example(self, baseline_spec):
        mu1, mu2 = compute_mu1_mu2(baseline_spec, np.ones(5), [2.0], [99.0, 3.0], 0.0, 0)
        assert mu1 == pytest.approx(6.0)
        assert mu2 == pytest.approx(4.0)

    def test_zero_coefficients(self, baseline_spec):
        mu1, mu2 = compute_mu1_mu2(baseline_spec, np.zeros(5), [2.0], [1.0, 3.0], 5.0, 1)
        assert (mu1, mu2) == (pytest.approx(5.0), pytest.approx(0.0))

    def test_stored_value_is_ignored(self, baseline_spec):
        first = compute_mu1_mu2(baseline_spec, np.arange(5.0), [1.0], [-4.0, 3.0], 0.5, 0)
        second = compute_mu1_mu2(baseline_spec, np.arange(5.0), [1.0], [12.0, 3.0], 0.5, 0)
        assert first == pytest.approx(second)

    def test_identity_over_random_models(self):
        rng = np.random.default_rng(31)
        for _ in range(1000):
            spec = random_spec(rng)
            beta = rng.normal(size=spec.n_fixed)
            x = rng.normal(size=spec.q)
            c = rng.normal(size=spec.p)
            u = float(rng.normal())
            k = int(rng.integers(spec.p))
            mu1, mu2 = compute_mu1_mu2(spec, beta, x, c, u, k)
            full = build_design_vector(spec, x, c) @ beta + u
            assert mu1 + mu2 * c[k] == pytest.approx(full, abs=1e-10)

    def test_rows_match_single_units(self):
        spec = HlmSpec(p=2, q1=1, q2=1, active_xc=((0, 0),), active_cc=((0, 1),))
        rng = np.random.default_rng(6)
        beta = rng.normal(size=spec.n_fixed)
        x = rng.normal(size=(4, 2))
        c = rng.normal(size=(4, 2))
        u = rng.normal(size=4)
        mu1, mu2 = mu_decomposition(spec, beta, x, c, u, 0)
        for i in range(4):
            assert (mu1[i], mu2[i]) == pytest.approx(compute_mu1_mu2(spec, beta, x[i], c[i], u[i], 0))


# ==============================================================================
# EXACT POSTERIOR
# ==============================================================================

class TestPosterior:
    """Normal posterior of a missing C_kj."""

    def test_sums_example(self):
        mean, variance = posterior_from_sums(np.array([0.0]), 1.0, 1.0, np.array([1.0]), np.array([2.0]))
        assert mean[0] == pytest.approx(1.0)
        assert variance[0] == pytest.approx(0.5)

    def test_single_unit_example(self):
        spec = HlmSpec(p=1)
        params = Parameters(beta=[0.0, 1.0], tau=1.0, sigma2=1.0, alpha=[0.0], T=[[1.0]])
        mean, variance = posterior_c_kj(spec, np.zeros((1, 0)), [2.0], [0.0], [], 0.0, params, 0)
        assert mean == pytest.approx(1.0)
        assert variance == pytest.approx(0.5)

    def test_no_outcome_information_returns_prior(self):
        spec = HlmSpec(p=2, q2=1)
        params = Parameters(
            beta=[1.0, 0.0, 2.0, 0.5], tau=1.0, sigma2=2.0, alpha=[0.75, 0.7, -0.5, 1.0], T=BASELINE_T
        )
        x_rows = np.full((3, 1), 1.5)
        mean, variance = posterior_c_kj(spec, x_rows, [1.0, 4.0, -2.0], [0.0, 0.8], [1.5], 0.2, params, 0)
        prior = conditional_moments_c(0, [0.8], params.alpha, params.T, [1.5])
        assert mean == pytest.approx(prior.mean)
        assert variance == pytest.approx(prior.variance)

    def test_non_positive_precision_raises(self):
        with pytest.raises(SamplerError):
            posterior_from_sums(np.array([0.0]), -1.0, 1.0, np.array([0.5]), np.array([0.0]))

    def test_matches_numerical_integration(self):
        spec = HlmSpec(p=2, q1=1, q2=1, active_xc=((0, 0),), active_cc=((0, 1),))
        rng = np.random.default_rng(13)
        beta = rng.normal(size=spec.n_fixed)
        params = Parameters(beta=beta, tau=1.0, sigma2=1.5, alpha=rng.normal(size=4), T=BASELINE_T)
        x_rows = np.column_stack([rng.normal(size=4), np.full(4, 0.7)])
        y = 2.0 * rng.normal(size=4)
        c_j = np.array([0.0, 0.4])
        u_j = 0.3

        mean, variance = posterior_c_kj(spec, x_rows, y, c_j, [0.7], u_j, params, 0)

        # Brute force: the predictor is affine in C_1j, so evaluate it at 0 and 1.
        at0 = np.array([build_design_vector(spec, x, [0.0, 0.4]) @ beta for x in x_rows]) + u_j
        slope = np.array([build_design_vector(spec, x, [1.0, 0.4]) @ beta for x in x_rows]) + u_j - at0
        m = np.array([params.alpha[0] + 0.7 * params.alpha[1], params.alpha[2] + 0.7 * params.alpha[3]])
        prior_mean = m[0] + BASELINE_T[0, 1] / BASELINE_T[1, 1] * (0.4 - m[1])
        prior_var = BASELINE_T[0, 0] - BASELINE_T[0, 1] ** 2 / BASELINE_T[1, 1]
        grid = np.linspace(-40.0, 40.0, 400_001)
        residual = y[None, :] - at0[None, :] - slope[None, :] * grid[:, None]
        log_post = -0.5 * (residual**2).sum(axis=1) / 1.5 - 0.5 * (grid - prior_mean) ** 2 / prior_var
        weights = np.exp(log_post - log_post.max())
        weights /= weights.sum()
        oracle_mean = float(weights @ grid)
        oracle_var = float(weights @ (grid - oracle_mean) ** 2)

        assert mean == pytest.approx(oracle_mean, rel=1e-5, abs=1e-8)
        assert variance == pytest.approx(oracle_var, rel=1e-5)

    def test_more_units_never_widen_the_posterior(self):
        spec = HlmSpec(p=2, q2=1, active_cc=((0, 1),))
        rng = np.random.default_rng(19)
        params = Parameters(
            beta=rng.normal(size=spec.n_fixed), tau=1.0, sigma2=2.0, alpha=rng.normal(size=4), T=BASELINE_T
        )
        x_rows = np.full((5, 1), 0.2)
        y = rng.normal(size=5)
        _, fewer = posterior_c_kj(spec, x_rows[:3], y[:3], [0.0, 1.0], [0.2], 0.0, params, 0)
        _, more = posterior_c_kj(spec, x_rows, y, [0.0, 1.0], [0.2], 0.0, params, 0)
        assert more <= fewer
