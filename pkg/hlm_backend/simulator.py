"""Simulation scenarios, missingness laws and replication studies."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

from .design import build_design_matrix, covariate_means, hlm_labels, parameter_labels
from .diagnostics import assess_convergence, posterior_summary
from .errors import MissingnessError, SpecificationError
from .metrics import aggregate_metrics, pass_rates
from .models import DEFAULT_SIMULATION_PARAMS, Dataset, GibbsConfig, HlmSpec, Parameters, PriorConfig
from .rng import RngStream, draw_mvn, draw_normal
from .sampler import flatten_parameters, run_chains, stack_draws

logger = logging.getLogger(__name__)

SCENARIOS = ("baseline", "lognormal-covariate", "mnar", "extra-interactions")
MAR = "MAR"
MNAR = "MNAR"

# Sub-streams of a replication stream.
DATA_STREAM = 0
MASK_STREAM = 1
CHAIN_STREAM = 2

BASELINE_ALPHA = (0.75, 0.7, -0.5, 1.0)
BASELINE_T = ((1.25, -0.5), (-0.5, 1.0))
BASELINE_TAU = 4.0
BASELINE_SIGMA2 = 16.0
LOGNORMAL_LOG_VARIANCE = 0.2


@dataclass(frozen=True)
class MissingnessLaw:
    """Cluster-level response law for one variable.

    MAR: logit(p_j) ~ N(c0 + c1 * driver_j, delta), ``delta`` being a variance.
    MNAR: logit(p_j) = d0 + d1 * driver_j, the driver being an unobserved value.
    """

    variable: str
    kind: str
    coefficients: Tuple[float, ...]
    driver: str

    def __post_init__(self) -> None:
        kind = self.kind.upper()
        coefficients = tuple(float(c) for c in self.coefficients)
        if kind == MAR:
            if len(coefficients) == 2:
                coefficients = coefficients + (0.0,)
            if len(coefficients) != 3:
                raise MissingnessError(f"MAR law for {self.variable} needs c0, c1, delta")
            if coefficients[2] < 0:
                raise MissingnessError(f"MAR law for {self.variable} has negative delta")
        elif kind == MNAR:
            if len(coefficients) != 2:
                raise MissingnessError(f"MNAR law for {self.variable} needs d0, d1")
        else:
            raise MissingnessError(f"unknown missingness kind: {self.kind}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "coefficients", coefficients)

    def logits(self, driver: np.ndarray, rng) -> np.ndarray:
        if self.kind == MAR:
            c0, c1, delta = self.coefficients
            return np.asarray(draw_normal(c0 + c1 * driver, delta, rng), dtype=float).reshape(-1)
        d0, d1 = self.coefficients
        return d0 + d1 * driver

    def probabilities(self, driver: np.ndarray, rng) -> np.ndarray:
        return expit(self.logits(np.asarray(driver, dtype=float), rng))


def default_laws(scenario: str) -> Tuple[MissingnessLaw, ...]:
    outcome = MissingnessLaw("Y", MAR, (-1.9, 0.1, 1.0), "X")
    if scenario == "mnar":
        return (
            outcome,
            MissingnessLaw("C1", MNAR, (-5.0, 1.3), "C1"),
            MissingnessLaw("C2", MNAR, (-10.5, 3.0), "C1"),
        )
    return (
        outcome,
        MissingnessLaw("C1", MAR, (0.8, -1.5, 0.0), "X"),
        MissingnessLaw("C2", MAR, (-2.8, 0.5, 0.0), "X"),
    )


@dataclass(frozen=True)
class SimulationDesign:
    scenario: str
    n_clusters: int
    cluster_size: int
    spec: HlmSpec
    truth: Parameters
    covariate_law: str = "normal"
    laws: Tuple[MissingnessLaw, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise SpecificationError(f"unknown scenario: {self.scenario}")
        if self.n_clusters < 2 or self.cluster_size < 1:
            raise SpecificationError("need at least two clusters of at least one unit")
        if self.truth.beta.shape != (self.spec.n_fixed,):
            raise SpecificationError(f"beta must have {self.spec.n_fixed} entries")
        if self.truth.alpha.shape != (self.spec.n_alpha,) or self.truth.T.shape != (2, 2):
            raise SpecificationError("alpha must have 4 entries and T must be 2x2")

    @property
    def truths(self) -> Dict[str, float]:
        return dict(zip(parameter_labels(self.spec), flatten_parameters(self.truth)))


def make_design(
    scenario: str = DEFAULT_SIMULATION_PARAMS["SCENARIO"],
    n_clusters: int = DEFAULT_SIMULATION_PARAMS["NUM_CLUSTERS"],
    cluster_size: int = DEFAULT_SIMULATION_PARAMS["CLUSTER_SIZE"],
    **overrides,
) -> SimulationDesign:
    """Scenario with default constants; ``overrides`` accepts tau, sigma2, beta, alpha, T and laws."""
    if scenario not in SCENARIOS:
        raise SpecificationError(
            f"unknown scenario: {scenario} (expected one of {', '.join(SCENARIOS)})"
        )
    active_xc = ((0, 0), (1, 0)) if scenario == "extra-interactions" else ()
    spec = HlmSpec(p=2, q1=0, q2=1, active_xc=active_xc, active_cc=((0, 1),))
    truth = Parameters(
        beta=np.ones(spec.n_fixed),
        tau=BASELINE_TAU,
        sigma2=BASELINE_SIGMA2,
        alpha=np.array(BASELINE_ALPHA),
        T=np.array(BASELINE_T),
    )
    design = SimulationDesign(
        scenario=scenario,
        n_clusters=int(n_clusters),
        cluster_size=int(cluster_size),
        spec=spec,
        truth=truth,
        covariate_law="lognormal" if scenario == "lognormal-covariate" else "normal",
        laws=default_laws(scenario),
    )
    return with_overrides(design, **overrides) if overrides else design


def with_overrides(
    design: SimulationDesign,
    tau: Optional[float] = None,
    sigma2: Optional[float] = None,
    beta: Optional[Sequence[float]] = None,
    alpha: Optional[Sequence[float]] = None,
    T: Optional[np.ndarray] = None,
    laws: Optional[Sequence[MissingnessLaw]] = None,
) -> SimulationDesign:
    """Replace scenario constants; laws replace the default law of the same variable."""
    changes = {}
    if tau is not None:
        changes["tau"] = tau
    if sigma2 is not None:
        changes["sigma2"] = sigma2
    if beta is not None:
        changes["beta"] = np.asarray(beta, dtype=float)
    if alpha is not None:
        changes["alpha"] = np.asarray(alpha, dtype=float)
    if T is not None:
        changes["T"] = np.asarray(T, dtype=float)
    truth = replace(design.truth, **changes) if changes else design.truth
    merged = list(design.laws)
    for law in laws or ():
        merged = [existing for existing in merged if existing.variable.lower() != law.variable.lower()]
        merged.append(law)
    return replace(design, truth=truth, laws=tuple(merged))


def simulate_dataset(design: SimulationDesign, rng) -> Dataset:
    """Complete dataset drawn from the scenario's generating law."""
    J, n = design.n_clusters, design.cluster_size
    truth = design.truth
    x = np.asarray(draw_normal(2.0, 1.0, rng, size=J), dtype=float)
    if design.covariate_law == "lognormal":
        log_c1 = draw_normal(0.5 + 0.1 * x, LOGNORMAL_LOG_VARIANCE, rng)
        c1 = np.exp(log_c1)
        c2 = np.asarray(draw_normal(1.0 + 0.1 * c1 + 0.3 * x, 1.0, rng), dtype=float)
        c = np.column_stack([c1, c2])
    else:
        means = covariate_means(x[:, None], truth.alpha, 2)
        c = means + draw_mvn(np.zeros(2), truth.T, rng, size=J)

    cluster = np.repeat(np.arange(J), n)
    u = np.asarray(draw_normal(0.0, truth.tau, rng, size=J), dtype=float)
    e = np.asarray(draw_normal(0.0, truth.sigma2, rng, size=J * n), dtype=float)
    design_matrix = build_design_matrix(design.spec, x[cluster][:, None], c[cluster])
    y = design_matrix @ truth.beta + u[cluster] + e
    return Dataset(
        cluster=cluster,
        y=y,
        y_missing=np.zeros(J * n, dtype=bool),
        x1=np.zeros((J * n, 0)),
        x2=x[:, None],
        c=c,
        c_missing=np.zeros((J, 2), dtype=bool),
        y_name="Y",
        x2_names=("X",),
        c_names=("C1", "C2"),
    )


def _cluster_values(dataset: Dataset, name: str) -> np.ndarray:
    key = name.lower()
    for k, c_name in enumerate(dataset.c_names):
        if c_name.lower() == key:
            return dataset.c[:, k]
    for k, x_name in enumerate(dataset.x2_names):
        if x_name.lower() == key:
            return dataset.x2[:, k]
    if any(x_name.lower() == key for x_name in dataset.x1_names) or key == dataset.y_name.lower():
        raise MissingnessError(f"driver {name} is not a cluster-level variable")
    raise MissingnessError(f"unknown driver variable: {name}")


def apply_missingness(dataset: Dataset, laws: Sequence[MissingnessLaw], rng) -> Dataset:
    """Mask cells by cluster-level Bernoulli(p_j) draws; values stay untouched.

    Drivers are read from the complete values, so an MNAR law sees the value
    it is about to hide. Outcome cells are masked unit by unit with their
    cluster's p_j.
    """
    y_missing = np.array(dataset.y_missing, copy=True)
    c_missing = np.array(dataset.c_missing, copy=True)
    generator = rng.generator if isinstance(rng, RngStream) else rng
    for law in laws:
        driver = _cluster_values(dataset, law.driver)
        p = law.probabilities(driver, rng)
        target = law.variable.lower()
        if target == dataset.y_name.lower():
            y_missing |= generator.random(dataset.N) < p[dataset.cluster]
            continue
        names = [name.lower() for name in dataset.c_names]
        if target not in names:
            raise MissingnessError(f"unknown missingness target: {law.variable}")
        k = names.index(target)
        c_missing[:, k] |= generator.random(dataset.J) < p
    return dataset.with_masks(y_missing, c_missing)


def missing_rates(dataset: Dataset) -> Dict[str, float]:
    rates = {dataset.y_name: float(dataset.y_missing.mean())}
    for k, name in enumerate(dataset.c_names):
        rates[name] = float(dataset.c_missing[:, k].mean())
    return rates


@dataclass(frozen=True)
class ReplicationOutcome:
    replication: int
    estimates: Tuple[Dict[str, object], ...] = ()
    geweke_pass: bool = False
    psrf_pass: bool = False
    missing: Mapping[str, float] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class ReplicationReport:
    """Aggregated replication metrics over the monitored outcome-model parameters."""

    scenario: str
    replications: int
    metrics: pd.DataFrame
    converged_metrics: pd.DataFrame
    pass_rates: Dict[str, float]
    log: pd.DataFrame
    failures: Tuple[Tuple[int, str], ...] = ()

    @property
    def completed(self) -> int:
        return self.replications - len(self.failures)

    @property
    def ese_degenerate(self) -> bool:
        """ESE is 0 by convention when only one replication completed."""
        return self.completed == 1


def run_replication(
    design: SimulationDesign,
    config: GibbsConfig,
    replication: int,
    priors: Optional[PriorConfig] = None,
) -> ReplicationOutcome:
    """Simulate, mask and fit one replication on stream ``(replication,)`` of the seed."""
    stream = RngStream(config.seed, replication)
    try:
        complete = simulate_dataset(design, stream.derive(DATA_STREAM))
        masked = apply_missingness(complete, design.laws, stream.derive(MASK_STREAM))
        chains = run_chains(masked, design.spec, priors, config, stream=stream.derive(CHAIN_STREAM), workers=1)
        labels = hlm_labels(design.spec)
        report = assess_convergence(chains, labels)
        rows = []
        for name in labels:
            summary = posterior_summary(stack_draws(chains, name).ravel())
            rows.append(
                {
                    "parameter": name,
                    "estimate": summary.mean,
                    "se": summary.sd,
                    "lower": summary.lower,
                    "upper": summary.upper,
                }
            )
        return ReplicationOutcome(
            replication=replication,
            estimates=tuple(rows),
            geweke_pass=report.geweke_pass,
            psrf_pass=report.psrf_pass,
            missing=missing_rates(masked),
        )
    except Exception as exc:
        logger.exception("Replication %d failed", replication)
        return ReplicationOutcome(replication=replication, error=f"{type(exc).__name__}: {exc}")


def _replication_job(args) -> ReplicationOutcome:
    return run_replication(*args)


def run_replications(
    design: SimulationDesign,
    replications: int,
    config: GibbsConfig,
    priors: Optional[PriorConfig] = None,
    workers: Optional[int] = None,
) -> ReplicationReport:
    """Run ``replications`` independent simulate-mask-fit cycles and aggregate them.

    Results depend only on ``(design, replications, config.seed)``; the worker
    count changes wall time, not output.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    logger.info(
        "--- Running %d replications of scenario %s (J=%d, n_j=%d) ---",
        replications, design.scenario, design.n_clusters, design.cluster_size,
    )
    jobs = [(design, config, r, priors) for r in range(replications)]
    workers = config.workers if workers is None else workers
    if workers > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replication_job, jobs))
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(_replication_job(job))
            if (job[2] + 1) % 10 == 0:
                logger.info("Completed %d/%d replications", job[2] + 1, replications)
    report = summarize_replications(design, outcomes)
    logger.info("--- Replications finished: %d completed, %d failed ---", report.completed, len(report.failures))
    return report


def summarize_replications(
    design: SimulationDesign, outcomes: Sequence[ReplicationOutcome]
) -> ReplicationReport:
    labels = hlm_labels(design.spec)
    truths = design.truths
    failures = tuple((o.replication, o.error) for o in outcomes if o.failed)
    for replication, message in failures:
        logger.warning("Replication %d excluded from aggregates: %s", replication, message)
    done = [o for o in outcomes if not o.failed]

    estimate_rows: List[Dict[str, object]] = []
    log_rows: List[Dict[str, object]] = []
    for outcome in outcomes:
        entry: Dict[str, object] = {
            "replication": outcome.replication,
            "status": "failed" if outcome.failed else "ok",
            "geweke_pass": outcome.geweke_pass,
            "psrf_pass": outcome.psrf_pass,
        }
        entry.update({f"missing_{name}": rate for name, rate in outcome.missing.items()})
        for row in outcome.estimates:
            entry[f"est_{row['parameter']}"] = row["estimate"]
            estimate_rows.append(
                {"replication": outcome.replication, "psrf_pass": outcome.psrf_pass, **row}
            )
        entry["error"] = outcome.error or ""
        log_rows.append(entry)

    columns = ["replication", "psrf_pass", "parameter", "estimate", "se", "lower", "upper"]
    estimates = pd.DataFrame(estimate_rows, columns=columns)
    metrics = aggregate_metrics(estimates, truths, labels)
    converged = aggregate_metrics(estimates[estimates["psrf_pass"].astype(bool)], truths, labels)
    flags = pd.DataFrame(
        [{"geweke_pass": o.geweke_pass, "psrf_pass": o.psrf_pass} for o in done],
        columns=["geweke_pass", "psrf_pass"],
    )
    return ReplicationReport(
        scenario=design.scenario,
        replications=len(outcomes),
        metrics=metrics,
        converged_metrics=converged,
        pass_rates=pass_rates(flags),
        log=pd.DataFrame(log_rows),
        failures=failures,
    )


__all__ = [
    "MAR",
    "MNAR",
    "MissingnessLaw",
    "ReplicationOutcome",
    "ReplicationReport",
    "SCENARIOS",
    "SimulationDesign",
    "apply_missingness",
    "default_laws",
    "make_design",
    "missing_rates",
    "run_replication",
    "run_replications",
    "simulate_dataset",
    "summarize_replications",
    "with_overrides",
]
