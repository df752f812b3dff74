"""Text reports for fits and replication studies."""

import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from hlm_backend.diagnostics import assess_convergence, summarize_chains
from hlm_backend.narrative import (
    convergence_lines,
    estimates_table,
    fit_summary,
    missing_counts,
    safe_format,
    simulation_summary,
)
from hlm_backend.sampler import Chain
from hlm_backend.simulator import ReplicationOutcome, make_design, summarize_replications


def _chains(n_chains=2, kept=200):
    rng = np.random.default_rng(21)
    labels = ("beta0", "beta1", "tau", "sigma2")
    centres = np.array([2.0, 0.0, 4.0, 16.0])
    return [
        Chain(labels=labels, draws=centres + 0.1 * rng.normal(size=(kept, 4)), chain_id=i)
        for i in range(n_chains)
    ]


@pytest.mark.parametrize(
    "value, spec, expected",
    [(1.23456, ".2f", "1.23"), (None, ".2f", "N/A"), (float("nan"), ".1%", "N/A"), ("x", ".2f", "N/A")],
)
def test_safe_format(value, spec, expected):
    assert safe_format(value, spec) == expected


class TestFitReport:
    def test_estimates_table_marks_significance(self):
        table = summarize_chains(_chains(), terms={"beta0": "Intercept", "beta1": "C1"})
        text = estimates_table(table)
        lines = text.splitlines()
        assert lines[0].startswith("Parameter")
        assert "Intercept" in lines[1] and "*" in lines[1]
        assert "*" not in lines[2]

    def test_fit_summary(self):
        chains = _chains()
        table = summarize_chains(chains)
        text = fit_summary(
            table,
            assess_convergence(chains),
            n_rows=800,
            n_clusters=200,
            missing=missing_counts(["Y", "C1"], [np.int64(12), 3]),
            centers={"X": 2.0},
            chains=2,
            burn_in=100,
            kept=200,
            seed=5,
        )
        assert "800 rows in 200 clusters; missing cells Y: 12, C1: 3." in text
        assert "Centered at observed means: X=2.0000." in text
        assert "= 0.200" in text
        assert "All monitored parameters have PSRF < 1.1." in text

    def test_single_chain_convergence_lines(self):
        lines = convergence_lines(assess_convergence(_chains(n_chains=1)))
        assert lines[-1] == "  PSRF unavailable (a single chain or too few draws)."
        assert all("(not converged)" not in line for line in lines)


class TestSimulationReport:
    def test_failures_and_degenerate_ese(self):
        design = make_design("baseline", 30, 4)
        rows = tuple(
            {"parameter": name, "estimate": value, "se": 0.5, "lower": value - 1.0, "upper": value + 1.0}
            for name, value in design.truths.items()
            if name.startswith("beta") or name in ("tau", "sigma2")
        )
        outcomes = [
            ReplicationOutcome(0, rows, geweke_pass=True, psrf_pass=True, missing={"Y": 0.2}),
            ReplicationOutcome(1, error="SamplerError: cycle 4, step T: not positive definite"),
        ]
        report = summarize_replications(design, outcomes)
        text = simulation_summary(report, 30, 4, seed=11)
        assert text.startswith("Scenario baseline: J=30, n_j=4, seed 11")
        assert "2 run, 1 completed, 1 failed." in text
        assert "Geweke 100.0%, PSRF 100.0%." in text
        assert "ESE is 0 by convention" in text
        assert "Replication 1 failed: SamplerError: cycle 4, step T" in text
