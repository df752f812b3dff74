"""Replication metrics: percent bias, ASE, ESE and interval coverage."""

from __future__ import annotations

import logging
from typing import Dict, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["parameter", "true", "mean_estimate", "pct_bias", "ase", "ese", "coverage", "n"]


def percent_bias(estimates: Iterable[float], true_value: float) -> float:
    """(mean estimate - truth) * 100 / truth; NaN when the truth is zero."""
    estimates = np.asarray(list(estimates), dtype=float)
    if estimates.size == 0 or true_value == 0:
        return float("nan")
    return float((estimates.mean() - true_value) * 100.0 / true_value)


def average_standard_error(standard_errors: Iterable[float]) -> float:
    ses = np.asarray(list(standard_errors), dtype=float)
    return float(ses.mean()) if ses.size else float("nan")


def empirical_standard_error(estimates: Iterable[float]) -> float:
    """SD of point estimates across replications; 0 for a single replication."""
    estimates = np.asarray(list(estimates), dtype=float)
    if estimates.size == 0:
        return float("nan")
    if estimates.size == 1:
        return 0.0
    return float(np.std(estimates, ddof=1))


def coverage(lowers: Iterable[float], uppers: Iterable[float], true_value: float) -> float:
    lowers = np.asarray(list(lowers), dtype=float)
    uppers = np.asarray(list(uppers), dtype=float)
    if lowers.size == 0:
        return float("nan")
    return float(np.mean((lowers <= true_value) & (true_value <= uppers)))


def aggregate_metrics(
    estimates: pd.DataFrame, truths: Mapping[str, float], parameters: Sequence[str]
) -> pd.DataFrame:
    """One metrics row per parameter from a long table of per-replication estimates.

    ``estimates`` needs columns ``parameter``, ``estimate``, ``se``, ``lower``
    and ``upper``; one row per replication and parameter.
    """
    rows = []
    for name in parameters:
        subset = estimates[estimates["parameter"] == name]
        truth = float(truths[name])
        rows.append(
            {
                "parameter": name,
                "true": truth,
                "mean_estimate": float(subset["estimate"].mean()) if len(subset) else float("nan"),
                "pct_bias": percent_bias(subset["estimate"], truth),
                "ase": average_standard_error(subset["se"]),
                "ese": empirical_standard_error(subset["estimate"]),
                "coverage": coverage(subset["lower"], subset["upper"], truth),
                "n": int(len(subset)),
            }
        )
    frame = pd.DataFrame(rows, columns=METRIC_COLUMNS)
    if len(frame) and (frame["n"] == 1).all():
        logger.info("Only one replication; ESE is reported as 0")
    return frame


def pass_rates(flags: pd.DataFrame) -> Dict[str, float]:
    """Share of replications passing each convergence criterion."""
    if flags.empty:
        return {"geweke": float("nan"), "psrf": float("nan")}
    return {
        "geweke": float(flags["geweke_pass"].mean()),
        "psrf": float(flags["psrf_pass"].mean()),
    }


__all__ = [
    "METRIC_COLUMNS",
    "aggregate_metrics",
    "average_standard_error",
    "coverage",
    "empirical_standard_error",
    "pass_rates",
    "percent_bias",
]
