"""Exact conditional algebra for imputing a partially observed cluster covariate.

For component k of C_j the outcome predictor splits into a part free of C_kj
(``mu1``, random effect included) and the coefficient multiplying it (``mu2``).
Combined with the Gaussian conditional of C_kj given the other components this
gives a normal posterior for C_kj, so no Metropolis step is needed.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np
from scipy import linalg

from .design import build_design_matrix, covariate_design
from .errors import SamplerError, SpecificationError
from .models import ConditionalMoments, HlmSpec, Parameters


def conditional_moments_all(
    k: int, c: np.ndarray, means: np.ndarray, T: np.ndarray
) -> Tuple[np.ndarray, float]:
    """M_{k|(-k)} for every row of ``c`` and the shared variance T_{k|(-k)}.

    ``c`` and ``means`` are n×p; column k of ``c`` is ignored.
    """
    c = np.atleast_2d(np.asarray(c, dtype=float))
    means = np.atleast_2d(np.asarray(means, dtype=float))
    T = np.atleast_2d(np.asarray(T, dtype=float))
    p = T.shape[0]
    if not 0 <= k < p:
        raise SpecificationError(f"covariate index {k} outside 0..{p - 1}")
    if p == 1:
        return means[:, 0].copy(), float(T[0, 0])
    others = [i for i in range(p) if i != k]
    try:
        factor = linalg.cho_factor(T[np.ix_(others, others)])
    except linalg.LinAlgError as exc:
        raise SamplerError(f"T with covariate {k} removed is singular") from exc
    weights = linalg.cho_solve(factor, T[others, k])
    mean = means[:, k] + (c[:, others] - means[:, others]) @ weights
    variance = float(T[k, k] - T[k, others] @ weights)
    return mean, variance


def conditional_moments_c(
    k: int,
    c_minus_k: Sequence[float],
    alpha: np.ndarray,
    T: np.ndarray,
    x2_j: Sequence[float],
) -> ConditionalMoments:
    """Gaussian conditional of C_kj given the other p-1 components of C_j."""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    p = T.shape[0]
    c_minus_k = np.atleast_1d(np.asarray(c_minus_k, dtype=float))
    if c_minus_k.shape != (p - 1,):
        raise SpecificationError(f"c_minus_k must have length {p - 1}")
    means = covariate_design(x2_j, p) @ np.asarray(alpha, dtype=float)
    c_full = np.insert(c_minus_k, k, 0.0)
    mean, variance = conditional_moments_all(k, c_full[None, :], means[None, :], T)
    try:
        return ConditionalMoments(float(mean[0]), variance)
    except ValueError as exc:
        raise SamplerError(str(exc)) from exc


def mu_decomposition(
    spec: HlmSpec,
    beta: np.ndarray,
    x_rows: np.ndarray,
    c_rows: np.ndarray,
    u_rows: np.ndarray,
    k: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise (mu1, mu2) with ``mu1 + mu2 * C_k`` equal to the full predictor."""
    if not 0 <= k < spec.p:
        raise SpecificationError(f"covariate index {k} outside 0..{spec.p - 1}")
    beta = np.asarray(beta, dtype=float)
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
    c_rows = np.atleast_2d(np.asarray(c_rows, dtype=float))
    n = c_rows.shape[0]
    if x_rows.size == 0:
        x_rows = np.zeros((n, 0))

    mu2 = np.full(n, beta[spec.c_offset + k])
    for offset, (s, col) in enumerate(spec.active_xc, start=spec.xc_offset):
        if s == k:
            mu2 = mu2 + beta[offset] * x_rows[:, col]
    for offset, (s, t) in enumerate(spec.active_cc, start=spec.cc_offset):
        if s == k:
            mu2 = mu2 + beta[offset] * c_rows[:, t]
        elif t == k:
            mu2 = mu2 + beta[offset] * c_rows[:, s]

    without_k = c_rows.copy()
    without_k[:, k] = 0.0
    mu1 = build_design_matrix(spec, x_rows, without_k) @ beta + np.asarray(u_rows, dtype=float)
    return mu1, mu2


def compute_mu1_mu2(
    spec: HlmSpec,
    beta: np.ndarray,
    x_ij: Sequence[float],
    c_j: Sequence[float],
    u_j: float,
    k: int,
) -> Tuple[float, float]:
    """(mu1_ij, mu2_ij) for a single unit; the value stored at ``c_j[k]`` is ignored."""
    x_ij = np.atleast_1d(np.asarray(x_ij, dtype=float))
    c_j = np.atleast_1d(np.asarray(c_j, dtype=float))
    mu1, mu2 = mu_decomposition(spec, beta, x_ij[None, :], c_j[None, :], np.array([u_j]), k)
    return float(mu1[0]), float(mu2[0])


def posterior_from_sums(
    mean: np.ndarray,
    variance: float,
    sigma2: float,
    sum_mu2_sq: np.ndarray,
    sum_mu2_resid: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of C_kj from per-cluster sums.

    ``sum_mu2_sq`` is Σ_i mu2², ``sum_mu2_resid`` is Σ_i mu2 (y - mu1 - mu2 M).
    """
    precision = 1.0 / variance + np.asarray(sum_mu2_sq) / sigma2
    if np.any(~np.isfinite(precision)) or np.any(precision <= 0):
        raise SamplerError("posterior precision of a cluster covariate is not positive")
    posterior_variance = 1.0 / precision
    posterior_mean = np.asarray(mean) + posterior_variance * np.asarray(sum_mu2_resid) / sigma2
    return posterior_mean, posterior_variance


def posterior_c_kj(
    spec: HlmSpec,
    x_rows: np.ndarray,
    y_rows: Sequence[float],
    c_j: Sequence[float],
    x2_j: Sequence[float],
    u_j: float,
    params: Parameters,
    k: int,
) -> Tuple[float, float]:
    """Exact posterior (mean, variance) of a missing C_kj for one cluster.

    ``x_rows`` are the n_j rows of known covariates ``[x1, x2]``, ``y_rows``
    the completed outcomes of the cluster.
    """
    c_j = np.atleast_1d(np.asarray(c_j, dtype=float))
    y_rows = np.atleast_1d(np.asarray(y_rows, dtype=float))
    x_rows = np.asarray(x_rows, dtype=float).reshape(y_rows.shape[0], -1)
    others = np.delete(c_j, k)
    moments = conditional_moments_c(k, others, params.alpha, params.T, x2_j)
    c_rows = np.repeat(c_j[None, :], y_rows.shape[0], axis=0)
    mu1, mu2 = mu_decomposition(
        spec, params.beta, x_rows, c_rows, np.full(y_rows.shape[0], u_j), k
    )
    residual = y_rows - mu1 - mu2 * moments.mean
    mean, variance = posterior_from_sums(
        moments.mean,
        moments.variance,
        params.sigma2,
        np.sum(mu2**2),
        np.sum(mu2 * residual),
    )
    return float(mean), float(variance)


__all__ = [
    "compute_mu1_mu2",
    "conditional_moments_all",
    "conditional_moments_c",
    "mu_decomposition",
    "posterior_c_kj",
    "posterior_from_sums",
]
