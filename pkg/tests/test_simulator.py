"""
Tests for simulation scenarios, missingness laws and replication studies.
"""

import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from numpy.polynomial.hermite_e import hermegauss
from scipy import stats
from scipy.special import expit

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from hlm_backend import simulator
from hlm_backend.design import build_design_matrix, covariate_means
from hlm_backend.errors import MissingnessError, SamplerError, SpecificationError
from hlm_backend.models import GibbsConfig
from hlm_backend.rng import RngStream
from hlm_backend.simulator import (
    MissingnessLaw,
    apply_missingness,
    make_design,
    missing_rates,
    run_replications,
    simulate_dataset,
    with_overrides,
)


def expected_mar_rate(law, driver):
    """E[expit(N(c0 + c1 x, delta))] averaged over the observed drivers."""
    c0, c1, delta = law.coefficients
    nodes, weights = hermegauss(40)
    weights = weights / weights.sum()
    logits = (c0 + c1 * driver)[:, None] + np.sqrt(delta) * nodes[None, :]
    return float((expit(logits) @ weights).mean())


# ==============================================================================
# MISSINGNESS LAWS
# ==============================================================================

class TestMissingnessLaw:
    """Cluster-level logistic response probabilities."""

    def test_mar_probability(self):
        law = MissingnessLaw("C2", "MAR", (-2.8, 0.5, 0.0), "X")
        p = law.probabilities(np.array([2.0]), RngStream(1))
        assert p[0] == pytest.approx(0.14185, abs=1e-4)

    def test_mnar_probability(self):
        law = MissingnessLaw("C1", "MNAR", (-5.0, 1.3), "C1")
        assert law.probabilities(np.array([3.0]), RngStream(1))[0] == pytest.approx(0.24974, abs=1e-4)

    def test_zero_logit_is_one_half(self):
        law = MissingnessLaw("Y", "mar", (0.0, 0.0), "X")
        assert law.kind == "MAR"
        assert law.coefficients == (0.0, 0.0, 0.0)
        np.testing.assert_allclose(law.probabilities(np.zeros(5), RngStream(1)), 0.5)

    def test_malformed_laws(self):
        with pytest.raises(MissingnessError):
            MissingnessLaw("Y", "MAR", (0.0, 1.0, -0.5), "X")
        with pytest.raises(MissingnessError):
            MissingnessLaw("C1", "MNAR", (0.0, 1.0, 2.0), "C1")
        with pytest.raises(MissingnessError):
            MissingnessLaw("C1", "MCAR", (0.0,), "X")


# ==============================================================================
# DATA GENERATION
# ==============================================================================

class TestScenarios:
    def test_baseline_design(self):
        design = make_design("baseline", 200, 4)
        assert design.spec.n_fixed == 5
        assert design.truths["tau"] == 4.0
        assert design.truths["T12"] == -0.5
        assert [law.variable for law in design.laws] == ["Y", "C1", "C2"]

    def test_extra_interactions(self):
        design = make_design("extra-interactions", 50, 4)
        assert design.spec.active_xc == ((0, 0), (1, 0))
        assert design.spec.n_fixed == 7
        assert len(simulator.hlm_labels(design.spec)) == 9

    def test_unknown_scenario(self):
        with pytest.raises(SpecificationError):
            make_design("nonsense")

    def test_overrides(self):
        design = make_design("baseline", 40, 4, tau=2.0, beta=[0.0, 1.0, 1.0, 1.0, 1.0])
        assert design.truth.tau == 2.0
        assert design.truth.beta[0] == 0.0
        replaced = with_overrides(design, laws=[MissingnessLaw("c1", "MAR", (0.0, 0.0), "X")])
        assert len(replaced.laws) == 3
        assert replaced.laws[-1].coefficients == (0.0, 0.0, 0.0)

    def test_wrong_beta_length(self):
        with pytest.raises(SpecificationError):
            make_design("baseline", 40, 4, beta=[1.0, 1.0])

    def test_baseline_moments(self):
        design = make_design("baseline", 2000, 4)
        data = simulate_dataset(design, RngStream(3))
        assert data.N == 8000 and data.J == 2000
        assert data.x2[:, 0].mean() == pytest.approx(2.0, abs=0.1)
        assert data.c[:, 0].mean() == pytest.approx(0.75 + 0.7 * 2.0, abs=0.2)
        assert data.c[:, 1].mean() == pytest.approx(-0.5 + 2.0, abs=0.25)
        residual = data.c - covariate_means(data.x2, design.truth.alpha, 2)
        np.testing.assert_allclose(np.cov(residual.T), design.truth.T, atol=0.12)

    def test_outcome_residual_variance(self):
        design = make_design("baseline", 5000, 4)
        data = simulate_dataset(design, RngStream(4))
        fitted = build_design_matrix(design.spec, data.x_rows, data.c[data.cluster]) @ design.truth.beta
        assert np.var(data.y - fitted) == pytest.approx(20.0, rel=0.1)

    def test_lognormal_covariate_is_skewed(self):
        design = make_design("lognormal-covariate", 20_000, 2)
        data = simulate_dataset(design, RngStream(5))
        assert np.all(data.c[:, 0] > 0)
        assert stats.skew(data.c[:, 0]) == pytest.approx(1.6, abs=0.3)

    def test_same_stream_same_data(self):
        design = make_design("baseline", 30, 4)
        a = simulate_dataset(design, RngStream(6, 2))
        b = simulate_dataset(design, RngStream(6, 2))
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.c, b.c)


# ==============================================================================
# MASKING
# ==============================================================================

class TestApplyMissingness:
    """Masks follow the laws and never alter values."""

    def test_unmask_restores_complete_data(self):
        design = make_design("baseline", 200, 4)
        complete = simulate_dataset(design, RngStream(7))
        masked = apply_missingness(complete, design.laws, RngStream(8))
        assert masked.y_missing.any() and masked.c_missing.any()
        restored = masked.unmask()
        np.testing.assert_array_equal(restored.y, complete.y)
        np.testing.assert_array_equal(restored.c, complete.c)

    def test_default_rates(self):
        design = make_design("baseline", 2000, 4)
        complete = simulate_dataset(design, RngStream(9))
        masked = apply_missingness(complete, design.laws, RngStream(10))
        rates = missing_rates(masked)
        x = complete.x2[:, 0]
        for law in design.laws:
            assert rates[law.variable] == pytest.approx(expected_mar_rate(law, x), abs=0.03), law.variable

    def test_mnar_depends_on_hidden_value(self):
        design = make_design("mnar", 4000, 2)
        complete = simulate_dataset(design, RngStream(11))
        masked = apply_missingness(complete, design.laws, RngStream(12))
        c1 = complete.c[:, 0]
        expected = expit(-5.0 + 1.3 * c1).mean()
        assert masked.c_missing[:, 0].mean() == pytest.approx(expected, abs=0.02)
        hidden = masked.c_missing[:, 1]
        assert c1[hidden].mean() > c1[~hidden].mean()

    def test_unknown_variables(self):
        design = make_design("baseline", 20, 2)
        complete = simulate_dataset(design, RngStream(13))
        with pytest.raises(MissingnessError):
            apply_missingness(complete, [MissingnessLaw("C9", "MAR", (0.0, 0.0), "X")], RngStream(1))
        with pytest.raises(MissingnessError):
            apply_missingness(complete, [MissingnessLaw("C1", "MAR", (0.0, 0.0), "Z")], RngStream(1))
        with pytest.raises(MissingnessError):
            apply_missingness(complete, [MissingnessLaw("C1", "MNAR", (0.0, 1.0), "Y")], RngStream(1))


# ==============================================================================
# REPLICATIONS
# ==============================================================================

SMALL = GibbsConfig(burn_in=60, kept=60, n_chains=2, seed=5)


class TestReplications:
    def test_report_shape(self):
        report = run_replications(make_design("baseline", 30, 4), 2, SMALL)
        assert report.completed == 2 and not report.failures
        assert list(report.metrics["parameter"]) == [
            "beta0", "beta1", "beta2", "beta3", "beta4", "tau", "sigma2"
        ]
        assert (report.metrics["n"] == 2).all()
        assert len(report.log) == 2
        assert set(report.pass_rates) == {"geweke", "psrf"}

    def test_reproducible(self):
        design = make_design("baseline", 30, 4)
        first = run_replications(design, 2, SMALL)
        second = run_replications(design, 2, SMALL)
        pd.testing.assert_frame_equal(first.metrics, second.metrics)
        pd.testing.assert_frame_equal(first.log, second.log)

    def test_single_replication_has_zero_ese(self):
        report = run_replications(make_design("baseline", 30, 4), 1, SMALL)
        assert report.ese_degenerate
        assert (report.metrics["ese"] == 0.0).all()

    def test_failure_is_recorded(self, monkeypatch):
        real = simulator.run_chains

        def flaky(dataset, spec, priors, config, stream=None, workers=None):
            if stream.path == (1, simulator.CHAIN_STREAM):
                raise SamplerError("forced failure", cycle=3, step="beta")
            return real(dataset, spec, priors, config, stream=stream, workers=workers)

        monkeypatch.setattr(simulator, "run_chains", flaky)
        report = run_replications(make_design("baseline", 30, 4), 2, SMALL)
        assert report.completed == 1
        assert report.failures[0][0] == 1
        assert "cycle 3, step beta" in report.failures[0][1]
        assert (report.metrics["n"] == 1).all()
        assert list(report.log["status"]) == ["ok", "failed"]


# ==============================================================================
# REPRODUCTION STUDIES
# ==============================================================================

FIXED_EFFECTS = ["beta0", "beta1", "beta2", "beta3", "beta4"]
ALL_PARAMETERS = FIXED_EFFECTS + ["tau", "sigma2"]


def study_config(seed):
    return GibbsConfig(burn_in=1000, kept=1000, n_chains=2, seed=seed, progress_every=0)


@pytest.mark.slow
def test_baseline_reproduction():
    """J=200 clusters of four units, 200 replications of 1000 + 1000 cycles."""
    design = make_design("baseline", 200, 4)
    report = run_replications(design, 200, study_config(20240501), workers=4)
    metrics = report.metrics.set_index("parameter")
    assert report.completed == 200
    for name in FIXED_EFFECTS:
        assert abs(metrics.loc[name, "pct_bias"]) < 5, name
    for name in ("tau", "sigma2"):
        assert abs(metrics.loc[name, "pct_bias"]) < 8, name
    for name in ALL_PARAMETERS:
        assert 0.90 <= metrics.loc[name, "coverage"] <= 0.99, name
        ratio = abs(metrics.loc[name, "ase"] - metrics.loc[name, "ese"]) / metrics.loc[name, "ese"]
        assert ratio < 0.20, name
    assert report.pass_rates["psrf"] >= 0.9


@pytest.fixture(scope="module")
def small_sample_report():
    """J=36 clusters of four units, 500 replications."""
    return run_replications(make_design("baseline", 36, 4), 500, study_config(20240502), workers=4)


@pytest.mark.slow
def test_small_sample_reproduction(small_sample_report):
    metrics = small_sample_report.metrics.set_index("parameter")
    assert small_sample_report.completed == 500
    assert 1.0 <= metrics.loc["beta0", "pct_bias"] <= 12.0
    assert -8.0 <= metrics.loc["tau", "pct_bias"] <= 5.0
    for name in ALL_PARAMETERS:
        assert 0.90 <= metrics.loc[name, "coverage"] <= 0.99, name


@pytest.mark.slow
def test_small_sample_convergence_rates(small_sample_report):
    """PSRF almost always passes while Geweke on all seven parameters often does not."""
    rates = small_sample_report.pass_rates
    assert rates["psrf"] >= 0.95
    assert 0.55 <= rates["geweke"] <= 0.80


@pytest.mark.slow
@pytest.mark.parametrize("scenario, seed", [("lognormal-covariate", 20240503), ("mnar", 20240504)])
def test_robustness_scenarios(scenario, seed):
    report = run_replications(make_design(scenario, 36, 4), 300, study_config(seed), workers=4)
    metrics = report.metrics.set_index("parameter")
    assert report.completed == 300
    for name in ALL_PARAMETERS:
        assert metrics.loc[name, "coverage"] >= 0.88, name
    assert abs(metrics.loc["tau", "pct_bias"]) < 15
