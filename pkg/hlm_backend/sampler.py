"""Compatible Gibbs sampler for a two-level model with missing cluster covariates.

One cycle runs eight exact conditional draws in a fixed order: random effects,
τ, β, σ², missing outcomes, α, T and finally the missing cluster covariates.
Every draw comes from a closed-form posterior, so the imputation model for C is
compatible with the outcome model including its interaction terms.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from .design import (
    build_design_matrix,
    complete_case_covariance,
    covariate_means,
    parameter_labels,
    vech_pairs,
)
from .errors import DataValidationError, SamplerError, SingularDesignError, SpecificationError
from .imputation import conditional_moments_all, mu_decomposition, posterior_from_sums
from .models import (
    SPD_TOLERANCE,
    ChainState,
    Dataset,
    GibbsConfig,
    HlmSpec,
    Parameters,
    PriorConfig,
)
from .rng import (
    RngStream,
    draw_inverse_gamma,
    draw_inverse_wishart,
    draw_mvn_precision,
    draw_normal,
)

logger = logging.getLogger(__name__)

STEP_NAMES = ("u", "tau", "beta", "sigma2", "impute_y", "alpha", "T", "impute_c")
INIT_PMM = "pmm"
INIT_MEAN = "mean"


def resolve_priors(priors: Optional[PriorConfig], dataset: Dataset) -> PriorConfig:
    """Fill in V₀ = p + 2 and S₀ = complete-case covariance where unset."""
    priors = priors or PriorConfig()
    p = dataset.p
    priors.check_dimension(p)
    iw_dof = priors.iw_dof if priors.iw_dof is not None else p + 2
    iw_scale = priors.iw_scale
    if iw_scale is None:
        iw_scale = complete_case_covariance(dataset, priors.ridge_scale)
    return replace(priors, iw_dof=float(iw_dof), iw_scale=iw_scale)


@dataclass(frozen=True)
class GibbsModel:
    """A dataset, its specification and resolved priors, with cached design pieces."""

    spec: HlmSpec
    dataset: Dataset
    priors: PriorConfig
    x_rows: np.ndarray
    z: np.ndarray

    @classmethod
    def build(
        cls, dataset: Dataset, spec: HlmSpec, priors: Optional[PriorConfig] = None
    ) -> "GibbsModel":
        dataset.check_spec(spec)
        x_rows = dataset.x_rows
        x_rows.setflags(write=False)
        z = np.hstack([np.ones((dataset.J, 1)), dataset.x2])
        z.setflags(write=False)
        return cls(spec, dataset, resolve_priors(priors, dataset), x_rows, z)

    @property
    def labels(self) -> List[str]:
        return parameter_labels(self.spec)

    def design(self, c: np.ndarray) -> np.ndarray:
        return build_design_matrix(self.spec, self.x_rows, np.asarray(c)[self.dataset.cluster])


def _design(state: ChainState, model: GibbsModel, design: Optional[np.ndarray]) -> np.ndarray:
    return model.design(state.c) if design is None else design


def step_u(
    state: ChainState, model: GibbsModel, rng, design: Optional[np.ndarray] = None
) -> np.ndarray:
    params = state.params
    data = model.dataset
    residual = state.y - _design(state, model, design) @ params.beta
    sums = np.bincount(data.cluster, weights=residual, minlength=data.J)
    precision = data.n_j / params.sigma2 + 1.0 / params.tau
    mean = sums / params.sigma2 / precision
    return np.asarray(draw_normal(mean, 1.0 / precision, rng), dtype=float)


def step_tau(state: ChainState, model: GibbsModel, rng) -> float:
    priors = model.priors
    shape = model.dataset.J / 2.0 + priors.ig_shape
    rate = float(np.sum(state.u**2)) / 2.0 + priors.ig_rate
    return float(draw_inverse_gamma(shape, rate, rng))


def _singular_column(design: np.ndarray) -> int:
    for column in range(design.shape[1]):
        if np.linalg.matrix_rank(design[:, : column + 1]) < column + 1:
            return column
    return design.shape[1] - 1


def step_beta(
    state: ChainState, model: GibbsModel, rng, design: Optional[np.ndarray] = None
) -> np.ndarray:
    """Flat-prior normal draw around the least-squares fit of ``y - u``."""
    design = _design(state, model, design)
    cross = design.T @ design
    eigenvalues = np.linalg.eigvalsh(cross)
    if eigenvalues[-1] <= 0 or eigenvalues[0] <= SPD_TOLERANCE * eigenvalues[-1]:
        column = _singular_column(design)
        raise SingularDesignError(column, model.labels[column])
    target = state.y - state.u[model.dataset.cluster]
    mean = linalg.cho_solve(linalg.cho_factor(cross), design.T @ target)
    return draw_mvn_precision(mean, cross, rng, scale=np.sqrt(state.params.sigma2))


def step_sigma2(
    state: ChainState, model: GibbsModel, rng, design: Optional[np.ndarray] = None
) -> float:
    params = state.params
    residual = (
        state.y
        - _design(state, model, design) @ params.beta
        - state.u[model.dataset.cluster]
    )
    shape = model.dataset.N / 2.0 + model.priors.ig_shape
    rate = float(residual @ residual) / 2.0 + model.priors.ig_rate
    return float(draw_inverse_gamma(shape, rate, rng))


def step_impute_y(
    state: ChainState, model: GibbsModel, rng, design: Optional[np.ndarray] = None
) -> np.ndarray:
    """Completed outcome vector; only masked cells receive fresh draws."""
    mask = model.dataset.y_missing
    if not mask.any():
        return state.y
    params = state.params
    predictor = _design(state, model, design) @ params.beta + state.u[model.dataset.cluster]
    y = np.array(state.y, copy=True)
    y[mask] = predictor[mask] + draw_normal(0.0, params.sigma2, rng, size=int(mask.sum()))
    return y


def step_alpha(state: ChainState, model: GibbsModel, rng) -> np.ndarray:
    """GLS draw of α; the precision factorises as T⁻¹ ⊗ ZᵀZ with Z = [1 x2]."""
    z = model.z
    T_inv = linalg.cho_solve(linalg.cho_factor(state.params.T), np.eye(model.dataset.p))
    T_inv = 0.5 * (T_inv + T_inv.T)
    precision = np.kron(T_inv, z.T @ z)
    rhs = (z.T @ state.c @ T_inv).T.reshape(-1)
    try:
        mean = linalg.cho_solve(linalg.cho_factor(precision), rhs)
    except linalg.LinAlgError as exc:
        raise SamplerError("cluster-level design [1 x2] is singular") from exc
    return draw_mvn_precision(mean, precision, rng)


def step_T(state: ChainState, model: GibbsModel, rng) -> np.ndarray:
    residual = state.c - covariate_means(model.dataset.x2, state.params.alpha, model.dataset.p)
    scale = model.priors.iw_scale + residual.T @ residual
    return draw_inverse_wishart(model.priors.iw_dof + model.dataset.J, 0.5 * (scale + scale.T), rng)


def step_impute_c(state: ChainState, model: GibbsModel, rng) -> np.ndarray:
    """Draw every missing C_kj from its exact posterior, component by component.

    Within a cycle, component k conditions on components already refreshed
    for k' < k. Clusters are conditionally independent, so each component is
    drawn for all affected clusters at once in ascending cluster order.
    """
    data = model.dataset
    if not data.c_missing.any():
        return state.c
    params = state.params
    c = np.array(state.c, copy=True)
    means = covariate_means(data.x2, params.alpha, data.p)
    for k in range(data.p):
        clusters = np.flatnonzero(data.c_missing[:, k])
        if clusters.size == 0:
            continue
        prior_mean, prior_variance = conditional_moments_all(k, c[clusters], means[clusters], params.T)
        if not prior_variance > 0:
            raise SamplerError(f"conditional variance of covariate {k} is not positive")
        rows = np.flatnonzero(data.c_missing[data.cluster, k])
        row_cluster = data.cluster[rows]
        mu1, mu2 = mu_decomposition(
            model.spec, params.beta, model.x_rows[rows], c[row_cluster], state.u[row_cluster], k
        )
        # Position of each row's cluster inside ``clusters``.
        slot = np.searchsorted(clusters, row_cluster)
        residual = state.y[rows] - mu1 - mu2 * prior_mean[slot]
        sum_sq = np.bincount(slot, weights=mu2**2, minlength=clusters.size)
        sum_resid = np.bincount(slot, weights=mu2 * residual, minlength=clusters.size)
        mean, variance = posterior_from_sums(
            prior_mean, prior_variance, params.sigma2, sum_sq, sum_resid
        )
        c[clusters, k] = draw_normal(mean, variance, rng)
    return c


# --- initialisation ---------------------------------------------------------


def init_strategies(n_chains: int) -> List[str]:
    """Fill strategy per chain: a single chain uses means, otherwise PMM then means alternately."""
    if n_chains == 1:
        return [INIT_MEAN]
    return [INIT_PMM if i % 2 == 0 else INIT_MEAN for i in range(n_chains)]


def _pmm_fill(values: np.ndarray, missing: np.ndarray, predictors: np.ndarray) -> np.ndarray:
    """Single-donor predictive mean matching; ties go to the lowest donor index."""
    observed = ~missing
    filled = np.array(values, dtype=float, copy=True)
    if not missing.any():
        return filled
    design = predictors[observed]
    if observed.sum() <= np.linalg.matrix_rank(design):
        filled[missing] = values[observed].mean()
        return filled
    coefficients, *_ = np.linalg.lstsq(design, values[observed], rcond=None)
    fitted = predictors @ coefficients
    donors = np.flatnonzero(observed)
    for index in np.flatnonzero(missing):
        donor = donors[np.argmin(np.abs(fitted[donors] - fitted[index]))]
        filled[index] = values[donor]
    return filled


def _check_observed(dataset: Dataset) -> None:
    if dataset.y_missing.all():
        raise DataValidationError(f"outcome {dataset.y_name} has no observed values")
    for k, name in enumerate(dataset.c_names):
        if dataset.c_missing[:, k].all():
            raise DataValidationError(f"cluster covariate {name} has no observed values")


def initial_fill(dataset: Dataset, strategy: str) -> Tuple[np.ndarray, np.ndarray]:
    """Completed ``(y, c)`` arrays used to start a chain."""
    _check_observed(dataset)
    c = np.array(dataset.c, dtype=float, copy=True)
    y = np.array(dataset.y, dtype=float, copy=True)
    if strategy == INIT_MEAN:
        for k in range(dataset.p):
            mask = dataset.c_missing[:, k]
            c[mask, k] = dataset.c[~mask, k].mean()
        y[dataset.y_missing] = dataset.y[~dataset.y_missing].mean()
        return y, c
    if strategy != INIT_PMM:
        raise ValueError(f"unknown initialisation strategy: {strategy}")
    z = np.hstack([np.ones((dataset.J, 1)), dataset.x2])
    for k in range(dataset.p):
        c[:, k] = _pmm_fill(dataset.c[:, k], dataset.c_missing[:, k], z)
    rows = np.hstack([np.ones((dataset.N, 1)), dataset.x_rows])
    y = _pmm_fill(dataset.y, dataset.y_missing, rows)
    return y, c


def _variance_split(residual: np.ndarray, dataset: Dataset) -> Tuple[float, float]:
    """Method-of-moments (τ, σ²) from between/within cluster variation."""
    n_j = dataset.n_j
    cluster_means = np.bincount(dataset.cluster, weights=residual, minlength=dataset.J) / n_j
    total = float(np.var(residual)) or 1.0
    if dataset.N == dataset.J:
        return 0.5 * total, 0.5 * total
    within = residual - cluster_means[dataset.cluster]
    sigma2 = float(within @ within) / (dataset.N - dataset.J)
    if sigma2 <= 0:
        sigma2 = 0.5 * total
    between = float(np.var(cluster_means, ddof=1)) if dataset.J > 1 else 0.0
    tau = max(between - sigma2 * float(np.mean(1.0 / n_j)), 0.05 * sigma2)
    return tau, sigma2


def initial_state(model: GibbsModel, y: np.ndarray, c: np.ndarray) -> ChainState:
    """θ from a least-squares fit of the completed data."""
    data = model.dataset
    design = model.design(c)
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - design @ beta
    tau, sigma2 = _variance_split(residual, data)

    coefficients, *_ = np.linalg.lstsq(model.z, c, rcond=None)
    alpha = coefficients.T.reshape(-1)
    c_residual = c - model.z @ coefficients
    dof = max(data.J - np.linalg.matrix_rank(model.z), 1)
    T = c_residual.T @ c_residual / dof
    T = 0.5 * (T + T.T)
    eigenvalues = np.linalg.eigvalsh(T)
    if eigenvalues[-1] <= 0 or eigenvalues[0] <= SPD_TOLERANCE * eigenvalues[-1]:
        scale = float(np.trace(T)) / data.p or 1.0
        T = T + max(model.priors.ridge_scale, 1e-6) * scale * np.eye(data.p)

    cluster_means = np.bincount(data.cluster, weights=residual, minlength=data.J) / data.n_j
    u = cluster_means * tau / (tau + sigma2 / data.n_j)
    return ChainState(Parameters(beta, tau, sigma2, alpha, T), u, y, c)


# --- chains -----------------------------------------------------------------


@dataclass(frozen=True)
class Chain:
    """Post-burn-in draws of one chain.

    ``draws`` is kept × len(labels). ``u``, ``y_imputed`` and ``c_imputed``
    are only recorded on request (kept × J, kept × missing y cells and
    kept × missing C cells in row-major order).
    """

    labels: Tuple[str, ...]
    draws: np.ndarray
    chain_id: int = 0
    init_strategy: str = INIT_MEAN
    stream_path: Tuple[int, ...] = ()
    u: Optional[np.ndarray] = None
    y_imputed: Optional[np.ndarray] = None
    c_imputed: Optional[np.ndarray] = None
    final_state: Optional[ChainState] = None

    def __post_init__(self) -> None:
        draws = np.array(self.draws, dtype=float, copy=True)
        if draws.ndim != 2 or draws.shape[1] != len(self.labels):
            raise ValueError("draws must be kept × number of labels")
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def kept(self) -> int:
        return int(self.draws.shape[0])

    def series(self, label: str) -> np.ndarray:
        return self.draws[:, self.labels.index(label)]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.draws, columns=list(self.labels))
        frame.index.name = "iteration"
        return frame


def flatten_parameters(params: Parameters) -> np.ndarray:
    """θ in label order: β, τ, σ², α, vech(T)."""
    T = params.T
    vech = [T[k, l] for k, l in vech_pairs(T.shape[0])]
    return np.concatenate([params.beta, [params.tau, params.sigma2], params.alpha, vech])


def _run_step(cycle: int, step: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SamplerError as exc:
        raise exc.locate(cycle, step)
    except (linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        raise SamplerError(str(exc), cycle=cycle, step=step) from exc


def _cycle(state: ChainState, model: GibbsModel, rng, cycle: int) -> ChainState:
    design = model.design(state.c)
    u = _run_step(cycle, "u", step_u, state, model, rng, design=design)
    state = replace(state, u=u)
    tau = _run_step(cycle, "tau", step_tau, state, model, rng)
    state = replace(state, params=_with(state.params, cycle, "tau", tau=tau))
    beta = _run_step(cycle, "beta", step_beta, state, model, rng, design=design)
    state = replace(state, params=replace(state.params, beta=beta))
    sigma2 = _run_step(cycle, "sigma2", step_sigma2, state, model, rng, design=design)
    state = replace(state, params=_with(state.params, cycle, "sigma2", sigma2=sigma2))
    y = _run_step(cycle, "impute_y", step_impute_y, state, model, rng, design=design)
    state = replace(state, y=y)
    alpha = _run_step(cycle, "alpha", step_alpha, state, model, rng)
    state = replace(state, params=replace(state.params, alpha=alpha))
    T = _run_step(cycle, "T", step_T, state, model, rng)
    state = replace(state, params=_with(state.params, cycle, "T", T=T))
    c = _run_step(cycle, "impute_c", step_impute_c, state, model, rng)
    return replace(state, c=c)


def _with(params: Parameters, cycle: int, step: str, **changes) -> Parameters:
    try:
        return replace(params, **changes)
    except ValueError as exc:
        raise SamplerError(str(exc), cycle=cycle, step=step) from exc


def _run_chain_model(
    model: GibbsModel,
    config: GibbsConfig,
    init: ChainState,
    rng,
    chain_id: int = 0,
    init_strategy: str = INIT_MEAN,
) -> Chain:
    data = model.dataset
    labels = tuple(model.labels)
    draws = np.empty((config.kept, len(labels)))
    u_draws = y_draws = c_draws = None
    if config.record_latent:
        u_draws = np.empty((config.kept, data.J))
        y_draws = np.empty((config.kept, int(data.y_missing.sum())))
        c_draws = np.empty((config.kept, int(data.c_missing.sum())))

    logger.info(
        "Chain %d: %d burn-in + %d kept cycles (%s start)",
        chain_id, config.burn_in, config.kept, init_strategy,
    )
    state = init
    total = config.burn_in + config.kept
    for cycle in range(1, total + 1):
        state = _cycle(state, model, rng, cycle)
        if cycle > config.burn_in:
            index = cycle - config.burn_in - 1
            draws[index] = flatten_parameters(state.params)
            if config.record_latent:
                u_draws[index] = state.u
                y_draws[index] = state.y_imputed(data)
                c_draws[index] = state.c_imputed(data)
        if config.progress_every and cycle % config.progress_every == 0:
            logger.debug("Chain %d: cycle %d/%d", chain_id, cycle, total)
    logger.info("Chain %d finished", chain_id)

    return Chain(
        labels=labels,
        draws=draws,
        chain_id=chain_id,
        init_strategy=init_strategy,
        stream_path=getattr(rng, "path", ()),
        u=u_draws,
        y_imputed=y_draws,
        c_imputed=c_draws,
        final_state=state,
    )


def run_chain(
    dataset: Dataset,
    spec: HlmSpec,
    priors: Optional[PriorConfig],
    config: GibbsConfig,
    init: ChainState,
    rng,
) -> Chain:
    """Run ``burn_in + kept`` cycles from ``init`` and record the kept draws.

    Numerical failures surface as ``SamplerError`` carrying the cycle index
    and step name.
    """
    model = GibbsModel.build(dataset, spec, priors)
    _check_state(model, init)
    return _run_chain_model(model, config, init, rng)


def _check_state(model: GibbsModel, state: ChainState) -> None:
    data, spec = model.dataset, model.spec
    if state.params.beta.shape != (spec.n_fixed,) or state.params.alpha.shape != (spec.n_alpha,):
        raise SpecificationError("initial β or α has the wrong length for the specification")
    if state.params.T.shape != (data.p, data.p):
        raise SpecificationError(f"initial T must be {data.p}x{data.p}")
    if state.u.shape != (data.J,) or state.y.shape != (data.N,) or state.c.shape != data.c.shape:
        raise SpecificationError("initial state does not match the dataset dimensions")
    observed_y = ~data.y_missing
    observed_c = ~data.c_missing
    if not np.array_equal(state.y[observed_y], data.y[observed_y]) or not np.array_equal(
        state.c[observed_c], data.c[observed_c]
    ):
        raise DataValidationError("initial state overwrites observed cells")
    if not (np.all(np.isfinite(state.y)) and np.all(np.isfinite(state.c))):
        raise DataValidationError("initial state leaves missing cells unfilled")


def _chain_job(args) -> Chain:
    model, config, chain_id, strategy, stream = args
    y, c = initial_fill(model.dataset, strategy)
    init = initial_state(model, y, c)
    return _run_chain_model(model, config, init, stream, chain_id, strategy)


def run_chains(
    dataset: Dataset,
    spec: HlmSpec,
    priors: Optional[PriorConfig],
    config: GibbsConfig,
    stream: Optional[RngStream] = None,
    workers: Optional[int] = None,
) -> List[Chain]:
    """Run ``config.n_chains`` chains, chain i on child stream i of ``stream``.

    With several chains, even chains start from a predictive-mean-matching
    fill and odd chains from column means. ``workers`` above 1 runs chains in
    separate processes; results do not depend on it.
    """
    model = GibbsModel.build(dataset, spec, priors)
    root = stream if stream is not None else RngStream(config.seed)
    jobs = [
        (model, config, i, strategy, root.derive(i))
        for i, strategy in enumerate(init_strategies(config.n_chains))
    ]
    workers = config.workers if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(_chain_job, jobs))
    return [_chain_job(job) for job in jobs]


def stack_draws(chains: Sequence[Chain], label: str) -> np.ndarray:
    """chains × kept array of one parameter."""
    return np.vstack([chain.series(label) for chain in chains])


__all__ = [
    "Chain",
    "GibbsModel",
    "INIT_MEAN",
    "INIT_PMM",
    "STEP_NAMES",
    "flatten_parameters",
    "init_strategies",
    "initial_fill",
    "initial_state",
    "resolve_priors",
    "run_chain",
    "run_chains",
    "stack_draws",
    "step_T",
    "step_alpha",
    "step_beta",
    "step_impute_c",
    "step_impute_y",
    "step_sigma2",
    "step_tau",
    "step_u",
]
