"""Plain-text summaries of fits and simulation studies."""

from __future__ import annotations

from typing import Dict, List, Mapping, Optional, Sequence

import pandas as pd

from .diagnostics import ConvergenceReport, intraclass_correlation
from .simulator import ReplicationReport


def safe_format(value: Optional[float], format_spec: str, fallback: str = "N/A") -> str:
    """Safely format values that may be missing, NaN or non-numeric."""
    if value is None:
        return fallback
    try:
        if value != value:
            return fallback
        return format(value, format_spec)
    except (TypeError, ValueError):
        return fallback


def _interval_columns(table: pd.DataFrame) -> List[str]:
    return [column for column in table.columns if column[:1] == "p" and column[1:2].isdigit()]


def estimates_table(table: pd.DataFrame) -> str:
    """Fixed-width rendering of a posterior table: estimate(se), interval, marker."""
    lower, upper = _interval_columns(table)[:2]
    width = max([len(str(t)) for t in table["term"]] + [9])
    lines = [f"{'Parameter':<10} {'Term':<{width}} {'Estimate(se)':>18} {'Interval':>22}"]
    for row in table.to_dict("records"):
        estimate = f"{safe_format(row['estimate'], '.2f')}({safe_format(row['se'], '.2f')}){row['sig']}"
        interval = f"({safe_format(row[lower], '.2f')}, {safe_format(row[upper], '.2f')})"
        lines.append(f"{row['parameter']:<10} {row['term']:<{width}} {estimate:>18} {interval:>22}")
    return "\n".join(lines)


def convergence_lines(report: ConvergenceReport) -> List[str]:
    lines = []
    frame = report.to_frame()
    for row in frame.itertuples(index=False):
        lines.append(
            f"  {row.parameter:<10} Geweke z={safe_format(row.geweke_z, '+.2f'):>7} "
            f"PSRF={safe_format(row.psrf, '.3f'):>6}"
            f"{'' if row.psrf_pass or not report.psrf_available else '  (not converged)'}"
        )
    if not report.psrf_available:
        lines.append("  PSRF unavailable (a single chain or too few draws).")
    elif report.psrf_pass:
        lines.append("  All monitored parameters have PSRF < 1.1.")
    else:
        lines.append(f"  PSRF >= 1.1 for: {', '.join(report.failing())}.")
    return lines


def fit_summary(
    table: pd.DataFrame,
    report: ConvergenceReport,
    n_rows: int,
    n_clusters: int,
    missing: Mapping[str, int],
    centers: Mapping[str, float],
    chains: int,
    burn_in: int,
    kept: int,
    seed: int,
) -> str:
    """Human-readable fit report."""
    estimates = table.set_index("parameter")["estimate"]
    tau = estimates.get("tau")
    sigma2 = estimates.get("sigma2")
    icc = intraclass_correlation(tau, sigma2) if tau is not None and sigma2 is not None else None
    missing_text = ", ".join(f"{name}: {count}" for name, count in missing.items()) or "none"
    lines = [
        "Two-level model fitted by Gibbs sampling",
        f"Data: {n_rows} rows in {n_clusters} clusters; missing cells {missing_text}.",
        f"Sampler: {chains} chain(s), {burn_in} burn-in and {kept} kept iterations, seed {seed}.",
    ]
    if centers:
        lines.append(
            "Centered at observed means: "
            + ", ".join(f"{name}={safe_format(value, '.4f')}" for name, value in centers.items())
            + "."
        )
    lines += ["", estimates_table(table), ""]
    lines.append(
        f"Intraclass correlation: {safe_format(tau, '.2f')}/({safe_format(tau, '.2f')}"
        f"+{safe_format(sigma2, '.2f')}) = {safe_format(icc, '.3f')}"
    )
    lines.append("* credible interval excludes 0.")
    lines += ["", "Convergence:"] + convergence_lines(report)
    return "\n".join(lines) + "\n"


def simulation_summary(report: ReplicationReport, n_clusters: int, cluster_size: int, seed: int) -> str:
    """Human-readable replication study report."""
    rates = report.pass_rates
    lines = [
        f"Scenario {report.scenario}: J={n_clusters}, n_j={cluster_size}, seed {seed}",
        f"Replications: {report.replications} run, {report.completed} completed, "
        f"{len(report.failures)} failed.",
        f"Convergence pass rates: Geweke {safe_format(rates.get('geweke'), '.1%')}, "
        f"PSRF {safe_format(rates.get('psrf'), '.1%')}.",
        "",
        f"{'Parameter':<10} {'True':>7} {'%Bias':>8} {'ASE':>8} {'ESE':>8} {'Coverage':>9}",
    ]
    for row in report.metrics.itertuples(index=False):
        lines.append(
            f"{row.parameter:<10} {safe_format(row.true, '.2f'):>7} {safe_format(row.pct_bias, '.1f'):>8} "
            f"{safe_format(row.ase, '.3f'):>8} {safe_format(row.ese, '.3f'):>8} "
            f"{safe_format(row.coverage, '.3f'):>9}"
        )
    if report.ese_degenerate:
        lines.append("ESE is 0 by convention with a single completed replication.")
    for replication, message in report.failures:
        lines.append(f"Replication {replication} failed: {message}")
    return "\n".join(lines) + "\n"


def missing_counts(names: Sequence[str], counts: Sequence[int]) -> Dict[str, int]:
    return {name: int(count) for name, count in zip(names, counts)}


__all__ = [
    "convergence_lines",
    "estimates_table",
    "fit_summary",
    "missing_counts",
    "safe_format",
    "simulation_summary",
]
