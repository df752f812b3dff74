"""Seeded random streams and the distributions the Gibbs sampler draws from.

Every chain and every simulation replication owns its own ``RngStream``.
Streams are keyed by ``(seed, path of stream ids)`` through numpy's
``SeedSequence`` spawn keys, so the same key always yields the same PCG64
sequence on every platform and distinct keys give independent sequences.
"""

from __future__ import annotations

from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.stats import invwishart

from .models import SPD_TOLERANCE, is_positive_definite

ArrayLike = Union[float, np.ndarray]


class RngStream:
    """A reproducible random stream identified by ``seed`` and ``stream_id``."""

    def __init__(self, seed: int, stream_id: int = 0, parent: Tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if stream_id < 0:
            raise ValueError("stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.path = tuple(int(i) for i in parent) + (self.stream_id,)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def derive(self, stream_id: int) -> "RngStream":
        """Child stream one level below this one."""
        return RngStream(self.seed, stream_id, parent=self.path)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"

    # Streams are rebuilt from their key when shipped to a worker process.
    def __reduce__(self):
        return (_rebuild_stream, (self.seed, self.path, self.generator.bit_generator.state))


def _rebuild_stream(seed: int, path: Tuple[int, ...], state: dict) -> RngStream:
    stream = RngStream(seed, path[-1], parent=path[:-1])
    stream.generator.bit_generator.state = state
    return stream


def _generator(rng: Union[RngStream, np.random.Generator]) -> np.random.Generator:
    return rng.generator if isinstance(rng, RngStream) else rng


def draw_normal(mean: ArrayLike, variance: ArrayLike, rng, size: Optional[int] = None) -> ArrayLike:
    """Draw from N(mean, variance); zero variance returns ``mean`` exactly."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0) or not np.all(np.isfinite(variance)):
        raise ValueError("variance must be finite and non-negative")
    mean = np.asarray(mean, dtype=float)
    shape = np.broadcast_shapes(mean.shape, variance.shape) if size is None else size
    noise = _generator(rng).standard_normal(shape)
    draw = np.where(variance == 0, mean, mean + np.sqrt(variance) * noise)
    return float(draw) if np.ndim(draw) == 0 else draw


def draw_mvn(mean: np.ndarray, covariance: np.ndarray, rng, size: Optional[int] = None) -> np.ndarray:
    """Draw from N(mean, covariance) through a symmetric eigen-factorisation.

    Directions with zero variance return the mean component exactly.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    covariance = np.atleast_2d(np.asarray(covariance, dtype=float))
    dim = mean.shape[0]
    if covariance.shape != (dim, dim):
        raise ValueError(f"covariance must be {dim}x{dim}")
    if not np.allclose(covariance, covariance.T, rtol=1e-10, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    eigenvalues, eigenvectors = linalg.eigh(covariance)
    largest = max(float(eigenvalues[-1]), 0.0)
    if eigenvalues[0] < -SPD_TOLERANCE * max(largest, 1.0):
        raise ValueError("covariance must be positive semidefinite")
    roots = np.sqrt(np.clip(eigenvalues, 0.0, None))
    roots[eigenvalues <= SPD_TOLERANCE * largest] = 0.0
    n = 1 if size is None else int(size)
    noise = _generator(rng).standard_normal((n, dim))
    draws = mean + (noise * roots) @ eigenvectors.T
    return draws[0] if size is None else draws


def draw_mvn_precision(
    mean: np.ndarray, precision: np.ndarray, rng, scale: float = 1.0
) -> np.ndarray:
    """Draw from N(mean, scale² · precision⁻¹) using a Cholesky factor of the precision."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    factor = linalg.cholesky(np.atleast_2d(precision), lower=True)
    noise = _generator(rng).standard_normal(mean.shape[0])
    if scale == 0:
        return mean.copy()
    return mean + scale * linalg.solve_triangular(factor.T, noise, lower=False)


def draw_inverse_gamma(shape: float, rate: float, rng, size: Optional[int] = None) -> ArrayLike:
    """Draw X = 1/G with G ~ Gamma(shape, rate); E[X] = rate/(shape - 1)."""
    if not (shape > 0 and rate > 0) or not (np.isfinite(shape) and np.isfinite(rate)):
        raise ValueError(f"inverse-gamma needs positive shape and rate, got ({shape}, {rate})")
    precision = _generator(rng).gamma(shape, 1.0 / rate, size=size)
    return 1.0 / precision


def draw_inverse_wishart(dof: float, scale: np.ndarray, rng) -> np.ndarray:
    """Draw a p×p SPD matrix from IW(dof, scale) with mean scale/(dof - p - 1).

    scipy's sampler uses the Bartlett decomposition of the Wishart of the
    inverse scale.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    dim = scale.shape[0]
    if not dof > dim - 1:
        raise ValueError(f"inverse-Wishart needs dof > p - 1 = {dim - 1}, got {dof}")
    if not is_positive_definite(scale):
        raise ValueError("inverse-Wishart scale must be symmetric positive definite")
    draw = np.atleast_2d(invwishart.rvs(df=dof, scale=scale, random_state=_generator(rng)))
    return 0.5 * (draw + draw.T)


__all__ = [
    "RngStream",
    "draw_inverse_gamma",
    "draw_inverse_wishart",
    "draw_mvn",
    "draw_mvn_precision",
    "draw_normal",
]
