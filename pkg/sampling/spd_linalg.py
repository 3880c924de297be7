#!/usr/bin/env python3
"""
Dense symmetric positive-definite matrices for the kinetic energy.

The inverse mass M_I is the object the samplers hold; the mass M = M_I^-1 is
only materialised when momenta are redrawn. Values are immutable once built:
the Cholesky factor and the inverse are computed on first use and cached.
"""

import logging
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import InsufficientSamples, NotPositiveDefinite

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-12
DEFAULT_RIDGE_SCALE = 1e-6


class SpdMatrix:
    """
    Immutable dense symmetric positive-definite matrix with factor cache.

    Construction only checks shape, finiteness and symmetry; positive
    definiteness is established by the first call to cholesky(), so that a
    rank-deficient estimate can still be built, inspected and ridged.
    """

    def __init__(self, entries: Sequence):
        array = np.array(entries, dtype=float)
        if array.ndim != 2 or array.shape[0] != array.shape[1] or array.shape[0] < 1:
            raise ValueError(f"SpdMatrix needs a non-empty square matrix, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NotPositiveDefinite("Matrix has non-finite entries")

        scale = max(np.max(np.abs(array)), np.finfo(float).tiny)
        asymmetry = np.max(np.abs(array - array.T))
        if asymmetry > SYMMETRY_RTOL * scale:
            raise NotPositiveDefinite(
                "Matrix is not symmetric",
                details={"max_asymmetry": float(asymmetry)}
            )

        array = 0.5 * (array + array.T)
        array.setflags(write=False)
        self._entries = array
        self._chol: Optional[np.ndarray] = None
        self._inverse: Optional["SpdMatrix"] = None

    @classmethod
    def identity(cls, dim: int) -> "SpdMatrix":
        return cls(np.eye(dim))

    @classmethod
    def diag(cls, values: Iterable[float]) -> "SpdMatrix":
        return cls(np.diag(np.asarray(list(values), dtype=float)))

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    @property
    def entries(self) -> np.ndarray:
        """Read-only view of the dense entries."""
        return self._entries

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self._entries @ v

    def __repr__(self) -> str:
        return f"SpdMatrix(dim={self.dim}, entries={self._entries.tolist()})"


def cholesky(m: SpdMatrix) -> np.ndarray:
    """
    Lower-triangular L with L @ L.T == m, cached on m.

    Raises:
        NotPositiveDefinite: if any pivot is not strictly positive
    """
    if m._chol is None:
        try:
            factor = linalg.cholesky(m.entries, lower=True)
        except linalg.LinAlgError as e:
            raise NotPositiveDefinite(
                "Cholesky factorization failed",
                details={"dim": m.dim},
                original_error=e
            )
        if np.any(np.diag(factor) <= 0.0):
            raise NotPositiveDefinite("Cholesky factorization produced a non-positive pivot")
        factor.setflags(write=False)
        m._chol = factor
    return m._chol


def sample_zero_mean_gaussian(cov: SpdMatrix, rng: np.random.Generator) -> np.ndarray:
    """Draw L @ z with z standard normal, so the result is N(0, cov)."""
    factor = cholesky(cov)
    z = rng.standard_normal(cov.dim)
    return factor @ z


def solve_spd(m: SpdMatrix, v: np.ndarray) -> np.ndarray:
    """Solve m @ x = v through the cached factor."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != m.dim:
        raise ValueError(f"Vector of length {v.shape[0]} does not match dimension {m.dim}")
    return linalg.cho_solve((cholesky(m), True), v)


def spd_inverse(m: SpdMatrix) -> SpdMatrix:
    """m^-1 as an SpdMatrix, cached on m."""
    if m._inverse is None:
        inv = solve_spd(m, np.eye(m.dim))
        m._inverse = SpdMatrix(0.5 * (inv + inv.T))
    return m._inverse


def quad_form(m: SpdMatrix, v: np.ndarray) -> float:
    return float(v @ m.entries @ v)


def log_det(m: SpdMatrix) -> float:
    return float(2.0 * np.sum(np.log(np.diag(cholesky(m)))))


def blend(a: SpdMatrix, b: SpdMatrix, kappa: float) -> SpdMatrix:
    """
    Convex combination (1 - kappa) * a + kappa * b, checked by factorization.

    Raises:
        NotPositiveDefinite: if the blend cannot be factored
    """
    if not 0.0 < kappa <= 1.0:
        raise ValueError(f"kappa must lie in (0, 1], got {kappa}")
    result = SpdMatrix((1.0 - kappa) * a.entries + kappa * b.entries)
    cholesky(result)
    return result


def empirical_covariance(samples: Sequence, ridge: Optional[float] = None) -> SpdMatrix:
    """
    Zero-mean covariance (1/n) sum p p^T + ridge * I of momentum samples.

    No mean is subtracted: momenta are drawn from N(0, M). When ridge is
    None it defaults to 1e-6 times the average diagonal entry.

    Raises:
        InsufficientSamples: if fewer than two samples are given
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim == 1:
        # scalar momenta, one per sample
        data = data[:, np.newaxis]
    n = data.shape[0]
    if n < 2:
        raise InsufficientSamples(
            "Covariance estimate needs at least two samples",
            details={"n": n}
        )

    cov = data.T @ data / n
    if ridge is None:
        mean_diag = np.trace(cov) / cov.shape[0]
        ridge = DEFAULT_RIDGE_SCALE * (mean_diag if mean_diag > 0 else 1.0)
    if ridge < 0:
        raise ValueError(f"ridge must be nonnegative, got {ridge}")
    return SpdMatrix(cov + ridge * np.eye(cov.shape[0]))


def condition_number(m: SpdMatrix) -> float:
    """Ratio of the largest to the smallest eigenvalue."""
    eigenvalues = linalg.eigvalsh(m.entries)
    if eigenvalues[0] <= 0.0:
        return float("inf")
    return float(eigenvalues[-1] / eigenvalues[0])


def clip_condition(m: SpdMatrix, max_condition: Optional[float]) -> SpdMatrix:
    """
    Raise the small eigenvalues of m to lambda_max / max_condition.

    Eigenvectors are kept. m itself is returned when it is already within
    the bound or when max_condition is None.
    """
    if max_condition is None:
        return m
    if max_condition < 1.0:
        raise ValueError(f"max_condition must be at least 1, got {max_condition}")
    eigenvalues, vectors = linalg.eigh(m.entries)
    top = eigenvalues[-1]
    if top <= 0.0:
        raise NotPositiveDefinite("Matrix has no positive eigenvalue")
    floor = top / max_condition
    if eigenvalues[0] >= floor:
        return m
    logger.debug(f"Clipping condition number {top / max(eigenvalues[0], np.finfo(float).tiny):.3g} "
                 f"to {max_condition:g}")
    clipped = np.maximum(eigenvalues, floor)
    result = SpdMatrix((vectors * clipped) @ vectors.T)
    cholesky(result)
    return result
