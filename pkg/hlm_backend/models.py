"""Data models and default configuration for the HLM Gibbs sampler.

Every value type here is immutable once constructed: numpy arrays are copied
and flagged read-only, so instances can be shared between chains and worker
processes without defensive copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import DataValidationError, ParameterValidationError, SpecificationError

# Smallest eigenvalue must exceed this fraction of the largest for a matrix to
# count as positive definite.
SPD_TOLERANCE = 1e-10

DEFAULT_GIBBS_PARAMS: Dict[str, Any] = {
    "BURN_IN": 2500,
    "KEPT": 2500,
    "NUM_CHAINS": 2,
    "SEED": 20240501,
    "WORKERS": 1,
    "RECORD_LATENT": False,
    "PROGRESS_EVERY": 500,
}

DEFAULT_PRIOR_PARAMS: Dict[str, Any] = {
    "IG_SHAPE": 1.0,
    "IG_SCALE": 0.5,
    "IW_DOF": None,
    "RIDGE_SCALE": 1e-6,
}

DEFAULT_SIMULATION_PARAMS: Dict[str, Any] = {
    "SCENARIO": "baseline",
    "NUM_CLUSTERS": 200,
    "CLUSTER_SIZE": 4,
    "REPLICATIONS": 1000,
}


def _frozen_array(values: Any, *, ndim: int, dtype: Any = float) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    if ndim == 2 and array.ndim == 1:
        array = array.reshape(-1, 1) if array.size else array.reshape(0, 0)
    if array.ndim != ndim:
        raise SpecificationError(f"expected a {ndim}-d array, got shape {array.shape}")
    array.setflags(write=False)
    return array


def _column_block(values: Any, n_rows: int) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True)
    array = np.zeros((n_rows, 0)) if array.size == 0 else array.reshape(n_rows, -1)
    array.setflags(write=False)
    return array


def is_positive_definite(matrix: np.ndarray, tolerance: float = SPD_TOLERANCE) -> bool:
    """Symmetric with smallest eigenvalue above ``tolerance`` times the largest."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    if not np.all(np.isfinite(matrix)):
        return False
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12):
        return False
    eigenvalues = np.linalg.eigvalsh(matrix)
    return bool(eigenvalues[-1] > 0 and eigenvalues[0] > tolerance * eigenvalues[-1])


@dataclass(frozen=True)
class HlmSpec:
    """Shape of the two-level model.

    ``p`` partially observed cluster covariates C, ``q1`` level-1 and ``q2``
    level-2 known covariates. ``active_xc`` holds ``(s, column)`` pairs where
    ``column`` indexes the known block ``X = [x1, x2]``; ``active_cc`` holds
    ``(s, t)`` pairs with ``s < t``. All indices are 0-based.
    """

    p: int
    q1: int = 0
    q2: int = 0
    active_xc: Tuple[Tuple[int, int], ...] = ()
    active_cc: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if int(self.p) < 1:
            raise SpecificationError("p must be at least 1")
        if int(self.q1) < 0 or int(self.q2) < 0:
            raise SpecificationError("q1 and q2 must be non-negative")
        q = int(self.q1) + int(self.q2)
        xc = tuple(sorted({(int(s), int(col)) for s, col in self.active_xc}))
        cc = tuple(sorted({(int(s), int(t)) for s, t in self.active_cc}))
        for s, col in xc:
            if not 0 <= s < self.p or not 0 <= col < q:
                raise SpecificationError(f"XC interaction {(s, col)} outside p={self.p}, q={q}")
        for s, t in cc:
            if not 0 <= s < t < self.p:
                raise SpecificationError(f"CC interaction {(s, t)} must satisfy 0 <= s < t < p")
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "q1", int(self.q1))
        object.__setattr__(self, "q2", int(self.q2))
        object.__setattr__(self, "active_xc", xc)
        object.__setattr__(self, "active_cc", cc)

    @property
    def q(self) -> int:
        return self.q1 + self.q2

    @property
    def n_fixed(self) -> int:
        return 1 + self.p + self.q + len(self.active_xc) + len(self.active_cc)

    @property
    def n_alpha(self) -> int:
        return self.p * (1 + self.q2)

    # Offsets of each block inside the fixed-effect vector.
    @property
    def c_offset(self) -> int:
        return 1

    @property
    def x_offset(self) -> int:
        return 1 + self.p

    @property
    def xc_offset(self) -> int:
        return 1 + self.p + self.q

    @property
    def cc_offset(self) -> int:
        return self.xc_offset + len(self.active_xc)


@dataclass(frozen=True)
class Dataset:
    """Long-format two-level data with missingness masks.

    ``cluster`` maps each of the N rows to a contiguous cluster index 0..J-1
    (rows sorted by cluster). ``y``/``y_missing`` are per row, ``x1`` is N×q1,
    ``x2`` is J×q2 and ``c``/``c_missing`` are J×p. Values under a mask are kept
    (they may be NaN for real data) and are never read by the sampler.
    """

    cluster: np.ndarray
    y: np.ndarray
    y_missing: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    c: np.ndarray
    c_missing: np.ndarray
    y_name: str = "y"
    x1_names: Tuple[str, ...] = ()
    x2_names: Tuple[str, ...] = ()
    c_names: Tuple[str, ...] = ()
    cluster_ids: Tuple[Any, ...] = ()
    centers: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        cluster = _frozen_array(self.cluster, ndim=1, dtype=np.int64)
        y = _frozen_array(self.y, ndim=1)
        y_missing = _frozen_array(self.y_missing, ndim=1, dtype=bool)
        c = _frozen_array(self.c, ndim=2)
        c_missing = _frozen_array(self.c_missing, ndim=2, dtype=bool)
        n_rows = cluster.shape[0]
        if n_rows == 0:
            raise DataValidationError("dataset has no rows")
        if np.any(np.diff(cluster) < 0) or cluster[0] != 0:
            raise DataValidationError("cluster indices must be sorted and start at 0")
        n_clusters = int(cluster[-1]) + 1
        if np.any(np.bincount(cluster, minlength=n_clusters) < 1):
            raise DataValidationError("cluster indices must be contiguous with n_j >= 1")
        x1 = _column_block(self.x1, n_rows)
        x2 = _column_block(self.x2, n_clusters)
        if y.shape != (n_rows,) or y_missing.shape != (n_rows,):
            raise DataValidationError("y and its mask must have one entry per row")
        if c.shape[0] != n_clusters or c_missing.shape != c.shape:
            raise DataValidationError("c and its mask must be J×p")
        if c.shape[1] < 1:
            raise DataValidationError("at least one partially observed covariate is required")
        if not np.all(np.isfinite(x1)) or not np.all(np.isfinite(x2)):
            raise DataValidationError("known covariates x1 and x2 must be fully observed")
        if not np.all(np.isfinite(y[~y_missing])):
            raise DataValidationError("observed outcome cells must be finite")
        if not np.all(np.isfinite(c[~c_missing])):
            raise DataValidationError("observed cluster covariate cells must be finite")

        object.__setattr__(self, "cluster", cluster)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_missing", y_missing)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "c_missing", c_missing)
        object.__setattr__(
            self, "x1_names", tuple(self.x1_names) or tuple(f"x1_{i + 1}" for i in range(x1.shape[1]))
        )
        object.__setattr__(
            self, "x2_names", tuple(self.x2_names) or tuple(f"x2_{i + 1}" for i in range(x2.shape[1]))
        )
        object.__setattr__(
            self, "c_names", tuple(self.c_names) or tuple(f"C{i + 1}" for i in range(c.shape[1]))
        )
        object.__setattr__(
            self, "cluster_ids", tuple(self.cluster_ids) or tuple(range(n_clusters))
        )
        object.__setattr__(self, "centers", dict(self.centers))
        if len(self.x1_names) != x1.shape[1] or len(self.x2_names) != x2.shape[1]:
            raise DataValidationError("covariate names do not match covariate columns")
        if len(self.c_names) != c.shape[1] or len(self.cluster_ids) != n_clusters:
            raise DataValidationError("cluster covariate names or cluster ids have the wrong length")

    @property
    def N(self) -> int:
        return int(self.cluster.shape[0])

    @property
    def J(self) -> int:
        return int(self.cluster[-1]) + 1

    @property
    def p(self) -> int:
        return int(self.c.shape[1])

    @property
    def q1(self) -> int:
        return int(self.x1.shape[1])

    @property
    def q2(self) -> int:
        return int(self.x2.shape[1])

    @property
    def n_j(self) -> np.ndarray:
        return np.bincount(self.cluster, minlength=self.J)

    @property
    def x_names(self) -> Tuple[str, ...]:
        return self.x1_names + self.x2_names

    @property
    def x_rows(self) -> np.ndarray:
        """Known covariates per row, ``[x1_ij, x2_j]`` (N×q)."""
        return np.hstack([self.x1, self.x2[self.cluster]])

    @property
    def complete_clusters(self) -> np.ndarray:
        return ~self.c_missing.any(axis=1)

    def unmask(self) -> "Dataset":
        """Return the dataset with every mask cleared and values untouched."""
        return self.with_masks(np.zeros_like(self.y_missing), np.zeros_like(self.c_missing))

    def with_masks(self, y_missing: np.ndarray, c_missing: np.ndarray) -> "Dataset":
        return replace(self, y_missing=y_missing, c_missing=c_missing)

    def check_spec(self, spec: HlmSpec) -> None:
        if (spec.p, spec.q1, spec.q2) != (self.p, self.q1, self.q2):
            raise SpecificationError(
                f"spec dimensions (p={spec.p}, q1={spec.q1}, q2={spec.q2}) do not match "
                f"dataset (p={self.p}, q1={self.q1}, q2={self.q2})"
            )


@dataclass(frozen=True)
class Parameters:
    """θ = (β, τ, σ², α, T)."""

    beta: np.ndarray
    tau: float
    sigma2: float
    alpha: np.ndarray
    T: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", _frozen_array(self.beta, ndim=1))
        object.__setattr__(self, "alpha", _frozen_array(self.alpha, ndim=1))
        T = np.atleast_2d(np.array(self.T, dtype=float, copy=True))
        T.setflags(write=False)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not is_positive_definite(T):
            raise ValueError("T must be symmetric positive definite")


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters: IG(α₀, β₀) on τ and σ², IW(V₀, S₀) on T, flat β and α.

    ``iw_dof`` and ``iw_scale`` default to ``p + 2`` and the complete-case
    covariance when left as ``None``; see ``sampler.resolve_priors``.
    """

    ig_shape: float = DEFAULT_PRIOR_PARAMS["IG_SHAPE"]
    ig_scale: float = DEFAULT_PRIOR_PARAMS["IG_SCALE"]
    iw_dof: Optional[float] = None
    iw_scale: Optional[np.ndarray] = None
    ridge_scale: float = DEFAULT_PRIOR_PARAMS["RIDGE_SCALE"]

    def __post_init__(self) -> None:
        if not self.ig_shape > 0 or not self.ig_scale > 0:
            raise ValueError("inverse-gamma shape and scale must be positive")
        if self.ridge_scale < 0:
            raise ValueError("ridge_scale must be non-negative")
        if self.iw_scale is not None:
            scale = np.atleast_2d(np.array(self.iw_scale, dtype=float, copy=True))
            if not is_positive_definite(scale):
                raise ValueError("iw_scale (S0) must be symmetric positive definite")
            scale.setflags(write=False)
            object.__setattr__(self, "iw_scale", scale)

    @property
    def ig_rate(self) -> float:
        """Rate of the precision's gamma prior, 1/β₀."""
        return 1.0 / self.ig_scale

    def check_dimension(self, p: int) -> None:
        if self.iw_dof is not None and not self.iw_dof > p - 1:
            raise ParameterValidationError({"IW_DOF": f"iw_dof must exceed p - 1 = {p - 1}"})
        if self.iw_scale is not None and self.iw_scale.shape != (p, p):
            raise SpecificationError(f"iw_scale must be {p}x{p}")


@dataclass(frozen=True)
class GibbsConfig:
    burn_in: int = DEFAULT_GIBBS_PARAMS["BURN_IN"]
    kept: int = DEFAULT_GIBBS_PARAMS["KEPT"]
    n_chains: int = DEFAULT_GIBBS_PARAMS["NUM_CHAINS"]
    seed: int = DEFAULT_GIBBS_PARAMS["SEED"]
    record_latent: bool = DEFAULT_GIBBS_PARAMS["RECORD_LATENT"]
    workers: int = DEFAULT_GIBBS_PARAMS["WORKERS"]
    progress_every: int = DEFAULT_GIBBS_PARAMS["PROGRESS_EVERY"]

    def __post_init__(self) -> None:
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.kept < 1:
            raise ValueError("kept must be at least 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(frozen=True)
class ChainState:
    """Current draws: θ, random effects and the completed y and C arrays.

    ``y`` (length N) and ``c`` (J×p) hold observed values where the dataset
    mask is False and the current imputation elsewhere.
    """

    params: Parameters
    u: np.ndarray
    y: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "u", _frozen_array(self.u, ndim=1))
        object.__setattr__(self, "y", _frozen_array(self.y, ndim=1))
        object.__setattr__(self, "c", _frozen_array(self.c, ndim=2))

    def y_imputed(self, dataset: Dataset) -> np.ndarray:
        return self.y[dataset.y_missing]

    def c_imputed(self, dataset: Dataset) -> np.ndarray:
        return self.c[dataset.c_missing]


@dataclass(frozen=True)
class ConditionalMoments:
    """Mean M_{k|(-k)} and variance T_{k|(-k)} of one covariate given the rest."""

    mean: float
    variance: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"conditional variance must be positive, got {self.variance}")


__all__ = [
    "ChainState",
    "ConditionalMoments",
    "DEFAULT_GIBBS_PARAMS",
    "DEFAULT_PRIOR_PARAMS",
    "DEFAULT_SIMULATION_PARAMS",
    "Dataset",
    "GibbsConfig",
    "HlmSpec",
    "Parameters",
    "PriorConfig",
    "SPD_TOLERANCE",
    "is_positive_definite",
]
