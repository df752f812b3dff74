"""Design vectors, covariate design matrices and complete-case moments.

Fixed-effect ordering is intercept, C block, X block (``[x1, x2]``), XC block
in ``(s, column)`` lexicographic order, CC block in ``(s, t)`` order.
"""

from __future__ import annotations

import logging
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InsufficientCompleteCasesError, SpecificationError
from .models import DEFAULT_PRIOR_PARAMS, SPD_TOLERANCE, Dataset, HlmSpec

logger = logging.getLogger(__name__)


def build_design_matrix(spec: HlmSpec, x_rows: np.ndarray, c_rows: np.ndarray) -> np.ndarray:
    """Row-stacked design vectors for known covariates ``x_rows`` (n×q) and ``c_rows`` (n×p)."""
    x_rows = np.asarray(x_rows, dtype=float)
    c_rows = np.asarray(c_rows, dtype=float)
    n = c_rows.shape[0]
    x_rows = x_rows.reshape(n, -1) if x_rows.size else np.zeros((n, 0))
    if c_rows.ndim != 2 or c_rows.shape[1] != spec.p:
        raise SpecificationError(f"expected {spec.p} cluster covariates, got shape {c_rows.shape}")
    if x_rows.shape[1] != spec.q:
        raise SpecificationError(f"expected {spec.q} known covariates, got {x_rows.shape[1]}")
    if x_rows.shape[0] != n:
        raise SpecificationError("known and cluster covariates have different row counts")

    design = np.empty((n, spec.n_fixed))
    design[:, 0] = 1.0
    design[:, spec.c_offset:spec.x_offset] = c_rows
    design[:, spec.x_offset:spec.xc_offset] = x_rows
    for offset, (s, col) in enumerate(spec.active_xc, start=spec.xc_offset):
        design[:, offset] = x_rows[:, col] * c_rows[:, s]
    for offset, (s, t) in enumerate(spec.active_cc, start=spec.cc_offset):
        design[:, offset] = c_rows[:, s] * c_rows[:, t]
    return design


def build_design_vector(spec: HlmSpec, x_ij: Sequence[float], c_j: Sequence[float]) -> np.ndarray:
    """Fixed-effect design vector of a single unit."""
    x_ij = np.atleast_1d(np.asarray(x_ij, dtype=float))
    c_j = np.atleast_1d(np.asarray(c_j, dtype=float))
    if c_j.ndim != 1 or x_ij.ndim != 1:
        raise SpecificationError("x_ij and c_j must be vectors")
    return build_design_matrix(spec, x_ij.reshape(1, -1), c_j.reshape(1, -1))[0]


def covariate_design(x2_j: Sequence[float], p: int) -> np.ndarray:
    """W = I_p ⊗ [1 x2_jᵀ], a p × p(1+q2) block-diagonal matrix."""
    row = np.concatenate([[1.0], np.atleast_1d(np.asarray(x2_j, dtype=float))])
    return np.kron(np.eye(p), row)


def covariate_means(x2: np.ndarray, alpha: np.ndarray, p: int) -> np.ndarray:
    """Wα for every cluster (J×p)."""
    x2 = np.asarray(x2, dtype=float)
    z = np.hstack([np.ones((x2.shape[0], 1)), x2.reshape(x2.shape[0], -1)])
    return z @ np.asarray(alpha, dtype=float).reshape(p, -1).T


def _ridge(matrix: np.ndarray, ridge_scale: float) -> np.ndarray:
    p = matrix.shape[0]
    trace = float(np.trace(matrix))
    epsilon = ridge_scale * (trace / p if trace > 0 else 1.0)
    return matrix + epsilon * np.eye(p)


def complete_case_covariance(dataset: Dataset, ridge_scale: float = DEFAULT_PRIOR_PARAMS["RIDGE_SCALE"]) -> np.ndarray:
    """Residual covariance of C over clusters with C fully observed.

    Each component is regressed on ``[1 x2_j]`` by least squares and the
    residual cross-products are divided by ``m - rank``. A ridge of
    ``ridge_scale · trace/p`` is added when the result is numerically singular.
    """
    complete = dataset.complete_clusters
    m = int(complete.sum())
    p = dataset.p
    z = np.hstack([np.ones((dataset.J, 1)), dataset.x2])[complete]
    rank = np.linalg.matrix_rank(z) if m else 0
    if m < p + 1 or m - rank < 1:
        raise InsufficientCompleteCasesError(
            f"only {m} clusters have every cluster covariate observed; at least "
            f"{max(p + 1, rank + 1)} are needed to estimate S0. Supply the "
            "inverse-Wishart scale (iw_scale) explicitly."
        )
    c = dataset.c[complete]
    coefficients, *_ = np.linalg.lstsq(z, c, rcond=None)
    residuals = c - z @ coefficients
    covariance = residuals.T @ residuals / (m - rank)
    covariance = 0.5 * (covariance + covariance.T)
    eigenvalues = np.linalg.eigvalsh(covariance)
    if eigenvalues[-1] <= 0 or eigenvalues[0] <= SPD_TOLERANCE * eigenvalues[-1]:
        logger.warning("complete-case covariance is singular; adding a ridge")
        covariance = _ridge(covariance, ridge_scale)
    return covariance


def term_names(spec: HlmSpec, x_names: Sequence[str], c_names: Sequence[str]) -> List[str]:
    """Readable names of the fixed-effect terms in design order."""
    names = ["Intercept", *c_names, *x_names]
    names += [f"{c_names[s]}x{x_names[col]}" for s, col in spec.active_xc]
    names += [f"{c_names[s]}x{c_names[t]}" for s, t in spec.active_cc]
    return names


def vech_pairs(p: int) -> List[Tuple[int, int]]:
    return [(k, l) for k in range(p) for l in range(k, p)]


def parameter_labels(spec: HlmSpec) -> List[str]:
    """Column labels for a recorded draw: β block, τ, σ², α block, vech(T)."""
    labels = [f"beta{i}" for i in range(spec.n_fixed)]
    labels += ["tau", "sigma2"]
    labels += [f"alpha{i}" for i in range(spec.n_alpha)]
    labels += [f"T{k + 1}{l + 1}" for k, l in vech_pairs(spec.p)]
    return labels


def hlm_labels(spec: HlmSpec) -> List[str]:
    """The monitored HLM parameters (β block, τ, σ²)."""
    return parameter_labels(spec)[: spec.n_fixed + 2]


__all__ = [
    "build_design_matrix",
    "build_design_vector",
    "complete_case_covariance",
    "covariate_design",
    "covariate_means",
    "hlm_labels",
    "parameter_labels",
    "term_names",
    "vech_pairs",
]
