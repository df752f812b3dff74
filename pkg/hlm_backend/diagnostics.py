"""Convergence diagnostics and posterior summaries for recorded chains."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .sampler import Chain, stack_draws

logger = logging.getLogger(__name__)

GEWEKE_CRITICAL = 1.96
PSRF_THRESHOLD = 1.1
MIN_PSRF_LENGTH = 10


@dataclass(frozen=True)
class GewekeResult:
    z: float
    passed: bool
    degenerate: bool = False


@dataclass(frozen=True)
class PsrfResult:
    value: float
    passed: bool
    degenerate: bool = False


def _batch_means_variance(segment: np.ndarray) -> float:
    """Variance of a segment mean from ⌊√m⌋ non-overlapping batch means."""
    m = segment.shape[0]
    n_batches = max(int(np.floor(np.sqrt(m))), 2)
    size = m // n_batches
    # Leading values that do not fill a batch are dropped.
    batches = segment[m - n_batches * size:].reshape(n_batches, size).mean(axis=1)
    return float(np.var(batches, ddof=1)) / n_batches


def geweke_diagnostic(
    series: Sequence[float],
    frac_a: float = 0.2,
    frac_b: float = 0.5,
    critical: float = GEWEKE_CRITICAL,
) -> GewekeResult:
    """Two-sample Z test between the first ``frac_a`` and last ``frac_b`` of a chain."""
    if not (0 < frac_a < 1 and 0 < frac_b < 1 and frac_a + frac_b <= 1):
        raise ValueError("segment fractions must lie in (0, 1) and sum to at most 1")
    values = np.asarray(series, dtype=float)
    n = values.shape[0]
    if n < 10 / min(frac_a, frac_b):
        raise ValueError(
            f"Geweke diagnostic needs at least {int(np.ceil(10 / min(frac_a, frac_b)))} draws, got {n}"
        )
    first = values[: int(frac_a * n)]
    last = values[n - int(frac_b * n):]
    variance = _batch_means_variance(first) + _batch_means_variance(last)
    difference = float(first.mean() - last.mean())
    if variance <= 0:
        if np.isclose(difference, 0.0, rtol=0.0, atol=1e-12 * max(1.0, abs(first.mean()))):
            return GewekeResult(0.0, True, degenerate=True)
        return GewekeResult(float(np.copysign(np.inf, difference)), False, degenerate=True)
    z = difference / np.sqrt(variance)
    return GewekeResult(float(z), bool(abs(z) < critical))


def geweke_z(series: Sequence[float], frac_a: float = 0.2, frac_b: float = 0.5) -> float:
    return geweke_diagnostic(series, frac_a, frac_b).z


def psrf_diagnostic(chains: Sequence[Sequence[float]], threshold: float = PSRF_THRESHOLD) -> PsrfResult:
    """Gelman-Rubin potential scale reduction factor of equal-length chains."""
    stacked = np.asarray([np.asarray(c, dtype=float) for c in chains])
    if stacked.ndim != 2 or stacked.shape[0] < 2:
        raise ValueError("PSRF needs at least two chains of equal length")
    n = stacked.shape[1]
    if n < MIN_PSRF_LENGTH:
        raise ValueError(f"PSRF needs at least {MIN_PSRF_LENGTH} draws per chain, got {n}")
    within = float(np.mean(np.var(stacked, axis=1, ddof=1)))
    between = n * float(np.var(stacked.mean(axis=1), ddof=1))
    if within <= 0:
        value = 1.0 if between <= 0 else float("inf")
        return PsrfResult(value, value < threshold, degenerate=True)
    value = float(np.sqrt(((n - 1) / n * within + between / n) / within))
    return PsrfResult(value, value < threshold)


def psrf(chains: Sequence[Sequence[float]]) -> float:
    return psrf_diagnostic(chains).value


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    sd: float
    lower: float
    upper: float

    @property
    def significant(self) -> bool:
        """True when the credible interval excludes zero."""
        return bool(self.lower > 0 or self.upper < 0)


def posterior_summary(series: Sequence[float], level: float = 0.95) -> PosteriorSummary:
    """Mean, SD and equal-tailed percentile interval (linear interpolation)."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    values = np.asarray(series, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("cannot summarise an empty series")
    tail = 100.0 * (1.0 - level) / 2.0
    lower, upper = np.percentile(values, [tail, 100.0 - tail])
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return PosteriorSummary(float(values.mean()), sd, float(lower), float(upper))


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-parameter Geweke and PSRF results over a monitored parameter set.

    An entry is None when its diagnostic could not be computed: PSRF with a
    single chain, or either test on chains shorter than its minimum length.
    """

    parameters: tuple
    geweke: tuple
    psrf: tuple

    @property
    def geweke_available(self) -> bool:
        return all(result is not None for result in self.geweke)

    @property
    def psrf_available(self) -> bool:
        return all(result is not None for result in self.psrf)

    @property
    def geweke_pass(self) -> bool:
        return self.geweke_available and all(result.passed for result in self.geweke)

    @property
    def psrf_pass(self) -> bool:
        return self.psrf_available and all(result.passed for result in self.psrf)

    def failing(self) -> List[str]:
        """Parameters failing the PSRF criterion (or Geweke when PSRF is unavailable)."""
        results = self.psrf if self.psrf_available else self.geweke
        return [p for p, r in zip(self.parameters, results) if r is not None and not r.passed]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for name, geweke, scale in zip(self.parameters, self.geweke, self.psrf):
            rows.append(
                {
                    "parameter": name,
                    "geweke_z": geweke.z if geweke is not None else np.nan,
                    "geweke_pass": geweke.passed if geweke is not None else False,
                    "psrf": scale.value if scale is not None else np.nan,
                    "psrf_pass": scale.passed if scale is not None else False,
                }
            )
        return pd.DataFrame(rows, columns=["parameter", "geweke_z", "geweke_pass", "psrf", "psrf_pass"])


def monitored_labels(labels: Sequence[str]) -> List[str]:
    """The outcome-model parameters: every β plus τ and σ²."""
    return [label for label in labels if label.startswith("beta") or label in ("tau", "sigma2")]


def _attempt(diagnostic, *args):
    try:
        return diagnostic(*args)
    except ValueError as exc:
        logger.warning("Diagnostic skipped: %s", exc)
        return None


def assess_convergence(
    chains: Sequence[Chain],
    parameters: Optional[Sequence[str]] = None,
    psrf_threshold: float = PSRF_THRESHOLD,
    critical: float = GEWEKE_CRITICAL,
) -> ConvergenceReport:
    """Geweke on the first chain and PSRF across all chains for each monitored parameter."""
    if not chains:
        raise ValueError("no chains to assess")
    parameters = list(parameters) if parameters is not None else monitored_labels(chains[0].labels)
    geweke, scales = [], []
    for name in parameters:
        geweke.append(_attempt(geweke_diagnostic, chains[0].series(name), 0.2, 0.5, critical))
        if len(chains) >= 2:
            scales.append(_attempt(psrf_diagnostic, [c.series(name) for c in chains], psrf_threshold))
        else:
            scales.append(None)
    report = ConvergenceReport(tuple(parameters), tuple(geweke), tuple(scales))
    if len(chains) < 2:
        logger.warning("PSRF needs at least two chains; only Geweke was evaluated")
    return report


def summarize_chains(
    chains: Sequence[Chain],
    parameters: Optional[Sequence[str]] = None,
    level: float = 0.95,
    terms: Optional[Dict[str, str]] = None,
) -> pd.DataFrame:
    """Pooled posterior table: estimate, SE, interval and a ``*`` significance marker."""
    if not chains:
        raise ValueError("no chains to summarise")
    parameters = list(parameters) if parameters is not None else list(chains[0].labels)
    terms = terms or {}
    tail = 100.0 * (1.0 - level) / 2.0
    lower_name = f"p{tail:g}"
    upper_name = f"p{100.0 - tail:g}"
    rows = []
    for name in parameters:
        pooled = stack_draws(chains, name).ravel()
        summary = posterior_summary(pooled, level)
        rows.append(
            {
                "parameter": name,
                "term": terms.get(name, name),
                "estimate": summary.mean,
                "se": summary.sd,
                lower_name: summary.lower,
                upper_name: summary.upper,
                "sig": "*" if summary.significant else "",
            }
        )
    return pd.DataFrame(rows)


def intraclass_correlation(tau: float, sigma2: float) -> float:
    total = tau + sigma2
    return float(tau / total) if total > 0 else float("nan")


__all__ = [
    "ConvergenceReport",
    "GEWEKE_CRITICAL",
    "GewekeResult",
    "PSRF_THRESHOLD",
    "PosteriorSummary",
    "PsrfResult",
    "assess_convergence",
    "geweke_diagnostic",
    "geweke_z",
    "intraclass_correlation",
    "monitored_labels",
    "posterior_summary",
    "psrf",
    "psrf_diagnostic",
    "summarize_chains",
]
