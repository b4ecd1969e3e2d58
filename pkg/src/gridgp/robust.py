"""Scalar robust-statistics primitives and the projection-statistics diagnostic.

The Huber family (rho / psi / q) operates on standardized residuals; the
projection statistics measure the outlyingness of basis rows in factor
space and feed the Schweppe-type leverage weights.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc, gammaincinv

from .exceptions import NumericalError

__all__ = [
    "HuberConfig",
    "LeverageDiagnostics",
    "huber_rho",
    "huber_psi",
    "huber_q",
    "robust_location_scale",
    "projection_statistics",
    "chi2_quantile",
    "shgm_weights",
]

# 1/Phi^{-1}(3/4): makes the MAD a consistent scale estimate at the Gaussian.
MAD_CONSISTENCY = 1.4826


@dataclass(frozen=True)
class HuberConfig:
    """Threshold of the Huber function, applied to standardized residuals.

    The default 1.5 keeps high efficiency at the Gaussian while bounding
    the influence of large residuals. ``math.inf`` is accepted and turns
    every downstream weight into 1 (plain least squares).
    """

    c: float = 1.5

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"Huber threshold must be positive, got {self.c}")


def _check_finite(r, name: str = "r"):
    arr = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def huber_rho(r, cfg: HuberConfig = HuberConfig()):
    """Huber loss: quadratic inside the threshold, linear beyond it.

    Accepts a scalar or array; returns the same shape. Continuous and
    convex, with both branches agreeing at ``|r| = c``.
    """
    arr = _check_finite(r)
    c = cfg.c
    a = np.abs(arr)
    out = np.where(a < c, 0.5 * arr * arr, c * a - 0.5 * c * c)
    return float(out) if np.isscalar(r) else out


def huber_psi(r, cfg: HuberConfig = HuberConfig()):
    """Derivative of :func:`huber_rho`: identity clipped to ``[-c, c]``."""
    arr = _check_finite(r)
    out = np.clip(arr, -cfg.c, cfg.c)
    return float(out) if np.isscalar(r) else out


def huber_q(r, cfg: HuberConfig = HuberConfig()):
    """Residual weight ``psi(r)/r`` with the removable singularity at 0 filled.

    Equals 1 for ``|r| <= c`` and ``c/|r|`` beyond; always in (0, 1].
    """
    arr = _check_finite(r)
    c = cfg.c
    a = np.abs(arr)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(a <= c, 1.0, c / a)
    return float(out) if np.isscalar(r) else out


def robust_location_scale(v) -> tuple[float, float]:
    """Sample median and the standardized MAD (1.4826 * median |v - med|).

    The median of an even-length sample is the mean of the two central
    order statistics. Returns scale 0 when at least half the entries
    coincide with the median.
    """
    arr = np.asarray(v, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("robust_location_scale: empty input")
    if not np.all(np.isfinite(arr)):
        raise ValueError("robust_location_scale: non-finite input")
    med = float(np.median(arr))
    mad = float(np.median(np.abs(arr - med)))
    return med, MAD_CONSISTENCY * mad


def projection_statistics(points) -> np.ndarray:
    """Maximum standardized projection distance of each row of a point cloud.

    Every direction runs from the coordinate-wise median through one of
    the data points; along each direction the projections are centered by
    their median and scaled by the standardized MAD. The statistic for a
    point is its largest absolute standardized distance over the whole
    direction set.

    Directions with zero projected MAD carry no scale information and are
    skipped; a cloud with a single distinct point yields all-zero
    statistics.

    Parameters
    ----------
    points : (m, d) array
        One row per point to diagnose. Requires m >= 2, d >= 1, all
        entries finite.
    """
    cloud = np.asarray(points, dtype=float)
    if cloud.ndim != 2:
        raise ValueError("projection_statistics: expected a 2-D array of row points")
    m, d = cloud.shape
    if m < 2 or d < 1:
        raise ValueError(f"projection_statistics: need m >= 2 and d >= 1, got {cloud.shape}")
    if not np.all(np.isfinite(cloud)):
        raise ValueError("projection_statistics: non-finite entries")
    if m <= d:
        warnings.warn(
            f"projection statistics with m={m} points in d={d} dimensions are "
            "poorly determined; m > d is recommended",
            stacklevel=2,
        )

    center = np.median(cloud, axis=0)
    diffs = cloud - center
    norms = np.linalg.norm(diffs, axis=1)
    keep = norms > 0.0
    if not np.any(keep):
        return np.zeros(m)

    directions = diffs[keep] / norms[keep, None]  # (k, d)
    proj = cloud @ directions.T  # (m, k)
    med = np.median(proj, axis=0)
    absdev = np.abs(proj - med)
    mad = MAD_CONSISTENCY * np.median(absdev, axis=0)
    usable = mad > 0.0
    if not np.any(usable):
        return np.zeros(m)
    return np.max(absdev[:, usable] / mad[usable], axis=1)


def chi2_quantile(prob: float, dof: int) -> float:
    """Chi-square quantile via the regularized incomplete-gamma inverse.

    Falls back to bisection on the CDF if the direct inverse misbehaves;
    either path is accurate to well below 1e-10.
    """
    if not 0.0 < prob < 1.0:
        raise ValueError(f"quantile probability must be in (0, 1), got {prob}")
    if dof < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {dof}")
    x = 2.0 * float(gammaincinv(dof / 2.0, prob))
    if np.isfinite(x) and x > 0:
        return x
    # Bisection fallback on F(x) = gammainc(dof/2, x/2).
    lo, hi = 0.0, 1.0
    while gammainc(dof / 2.0, hi / 2.0) < prob:
        hi *= 2.0
        if hi > 1e300:
            raise NumericalError(f"chi-square quantile failed for prob={prob}, dof={dof}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gammainc(dof / 2.0, mid / 2.0) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class LeverageDiagnostics:
    """Projection statistics with the chi-square cutoff and leverage weights."""

    ps: np.ndarray
    cutoff: float
    weights: np.ndarray
    dof: int = field(default=0)


def shgm_weights(ps, nu: int, *, prob: float = 0.975) -> LeverageDiagnostics:
    """Leverage weights: 1 below the chi-square cutoff, ``cutoff / PS**2`` above.

    ``nu`` is the dimension of the point cloud the statistics were computed
    on; the cutoff is the chi-square quantile at ``prob`` with ``nu``
    degrees of freedom. Weights lie in (0, 1] and are non-increasing in PS,
    so leverage points are downweighted smoothly rather than dropped.
    """
    ps_arr = np.asarray(ps, dtype=float).ravel()
    if not np.all(np.isfinite(ps_arr)):
        raise ValueError("shgm_weights: non-finite projection statistics")
    if np.any(ps_arr < 0):
        raise ValueError("shgm_weights: projection statistics must be >= 0")
    if nu < 1:
        raise ValueError(f"shgm_weights: nu must be >= 1, got {nu}")
    cutoff = chi2_quantile(prob, nu)
    ps_sq = ps_arr * ps_arr
    with np.errstate(divide="ignore"):
        weights = np.where(ps_sq <= cutoff, 1.0, cutoff / ps_sq)
    return LeverageDiagnostics(ps=ps_arr, cutoff=cutoff, weights=weights, dof=nu)
