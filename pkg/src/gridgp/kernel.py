"""Quadratic basis, squared-exponential kernel, and covariance factorization.

Everything downstream (the GM-estimator, the likelihood, the emulator)
solves against the covariance through the Cholesky factor produced here;
no explicit matrix inverses are formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, LinAlgError

from .exceptions import NumericalError
from .robust import robust_location_scale

__all__ = [
    "NUGGET_FLOOR_FACTOR",
    "KernelParams",
    "CovarianceFactor",
    "Standardizer",
    "quadratic_basis",
    "se_correlation",
    "correlation_matrix",
    "assemble_covariance",
    "factorize",
]

# Minimum diagonal regularization relative to the signal variance.
NUGGET_FLOOR_FACTOR = 1e-10

# Jitter escalation stops once it exceeds this fraction of the largest
# diagonal entry; beyond that the matrix is treated as genuinely indefinite.
_MAX_JITTER_FRACTION = 1e-4


@dataclass
class KernelParams:
    """Squared-exponential kernel hyperparameters.

    lengthscales : per-coordinate correlation lengths (input units)
    amplitude    : signal standard deviation tau (output units)
    nugget       : noise variance added to the diagonal (output units squared)
    """

    lengthscales: np.ndarray
    amplitude: float
    nugget: float

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if self.lengthscales.ndim != 1 or not np.all(np.isfinite(self.lengthscales)):
            raise ValueError("lengthscales must be a finite 1-D vector")
        if np.any(self.lengthscales <= 0):
            raise ValueError("lengthscales must be positive")
        if not (np.isfinite(self.amplitude) and self.amplitude > 0):
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if not (np.isfinite(self.nugget) and self.nugget >= 0):
            raise ValueError(f"nugget must be >= 0, got {self.nugget}")

    @property
    def nugget_floor(self) -> float:
        return NUGGET_FLOOR_FACTOR * self.amplitude**2


@dataclass
class CovarianceFactor:
    """Lower Cholesky factor of a covariance matrix plus its log-determinant.

    ``jitter`` records any diagonal regularization that had to be added to
    reach positive definiteness (0 when none was needed).
    """

    chol: np.ndarray
    log_det: float
    jitter: float = field(default=0.0)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve ``Sigma x = b`` through the stored factor."""
        return cho_solve((self.chol, True), b)


def quadratic_basis(X) -> np.ndarray:
    """Design matrix [1, x_1..x_p, x_1^2..x_p^2] with one row per input point."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("quadratic_basis: expected an (n, p) array")
    if not np.all(np.isfinite(X)):
        raise ValueError("quadratic_basis: non-finite entries")
    n = X.shape[0]
    return np.hstack([np.ones((n, 1)), X, X * X])


def se_correlation(x_i, x_j, lengthscales) -> float:
    """Squared-exponential correlation exp(-sum((xi - xj)^2 / l^2)) in (0, 1]."""
    xi = np.asarray(x_i, dtype=float).ravel()
    xj = np.asarray(x_j, dtype=float).ravel()
    ls = np.asarray(lengthscales, dtype=float).ravel()
    if xi.shape != xj.shape or xi.shape != ls.shape:
        raise ValueError("se_correlation: mismatched dimensions")
    if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(xj))):
        raise ValueError("se_correlation: non-finite inputs")
    if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
        raise ValueError("se_correlation: lengthscales must be positive")
    gap = (xi - xj) / ls
    return float(np.exp(-np.dot(gap, gap)))


def correlation_matrix(X, lengthscales, X2=None) -> np.ndarray:
    """Pairwise SE correlations between rows of ``X`` and rows of ``X2`` (or ``X``).

    Computed from explicit coordinate differences so the symmetric case is
    exactly symmetric with a unit diagonal.
    """
    A = np.asarray(X, dtype=float)
    B = A if X2 is None else np.asarray(X2, dtype=float)
    ls = np.asarray(lengthscales, dtype=float)
    As = A / ls
    Bs = B / ls
    d2 = np.sum((As[:, None, :] - Bs[None, :, :]) ** 2, axis=2)
    return np.exp(-d2)


def assemble_covariance(X, params: KernelParams) -> np.ndarray:
    """Training covariance ``tau^2 R(X, X) + nugget * I``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("assemble_covariance: expected an (n, p) array")
    if not np.all(np.isfinite(X)):
        raise ValueError("assemble_covariance: non-finite entries")
    if X.shape[1] != params.lengthscales.size:
        raise ValueError(
            f"assemble_covariance: {X.shape[1]} input coordinates vs "
            f"{params.lengthscales.size} lengthscales"
        )
    n = X.shape[0]
    sigma = params.amplitude**2 * correlation_matrix(X, params.lengthscales)
    sigma[np.diag_indices(n)] += params.nugget
    return sigma


def factorize(sigma, nugget_floor: float = 0.0) -> CovarianceFactor:
    """Cholesky-factor a symmetric covariance, escalating diagonal jitter on failure.

    Jitter starts at ``nugget_floor`` and grows tenfold per retry up to
    1e-4 of the largest diagonal entry; if the matrix still is not positive
    definite a :class:`NumericalError` reports every level tried.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError("factorize: expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(sigma))))
    if np.max(np.abs(sigma - sigma.T)) > 1e-10 * scale:
        raise ValueError("factorize: matrix is not symmetric")

    n = sigma.shape[0]
    max_diag = float(np.max(np.diag(sigma))) if n else 1.0
    jitter = 0.0
    tried: list[float] = []
    while True:
        try:
            chol = cholesky(sigma + jitter * np.eye(n) if jitter else sigma, lower=True)
            log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
            return CovarianceFactor(chol=chol, log_det=log_det, jitter=jitter)
        except LinAlgError:
            tried.append(jitter)
            if jitter == 0.0:
                jitter = nugget_floor if nugget_floor > 0 else 1e-12 * max(max_diag, 1.0)
            else:
                jitter *= 10.0
            if jitter > _MAX_JITTER_FRACTION * max(max_diag, 1.0):
                raise NumericalError(
                    "factorize: matrix not positive definite; "
                    f"jitter levels tried: {tried + [jitter]}"
                ) from None


@dataclass
class Standardizer:
    """Per-coordinate affine transform fitted with robust location and scale.

    Coordinates whose MAD vanishes fall back to the standard deviation and
    then to 1, so constant columns pass through unscaled.
    """

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("Standardizer.fit: expected an (n, p) array")
        centers = np.empty(X.shape[1])
        scales = np.empty(X.shape[1])
        for j in range(X.shape[1]):
            med, mad = robust_location_scale(X[:, j])
            if mad <= 0:
                sd = float(np.std(X[:, j]))
                mad = sd if sd > 0 else 1.0
            centers[j] = med
            scales[j] = mad
        return cls(center=centers, scale=scales)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X - self.center) / self.scale

    def inverse_transform(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return Z * self.scale + self.center
