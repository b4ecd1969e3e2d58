"""Schweppe-type generalized M-estimation of the regression weight vector.

The correlated-error regression is first whitened through the covariance
factor (rows scaled by the inverse Cholesky factor), then residuals are
standardized by the robust scale and the per-point leverage weights before
the Huber function sees them, so high-leverage points face a stricter
rejection threshold. The resulting estimating equations are solved by
iteratively reweighted least squares; in the whitened form each step is a
symmetric positive-definite solve and the iteration descends a convex
objective. With all residual weights equal to 1 (the Huber threshold at
infinity) the solution is exactly the generalized least-squares estimate
with the full covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import NumericalError
from .kernel import CovarianceFactor
from .robust import MAD_CONSISTENCY, HuberConfig, LeverageDiagnostics, huber_q

__all__ = ["RobustFit", "robust_scale", "irls_solve", "estimating_equation_norm"]

# Condition-number guard for the reweighted normal equations.
_MAX_CONDITION = 1e12


@dataclass
class RobustFit:
    """Result of one GM-estimator fit.

    ``weights`` are the combined per-point influence weights
    ``q(r_i / (w_i s)) * w_i`` in (0, 1]; ``q_weights`` and
    ``leverage_weights`` expose the two factors separately. ``residuals``
    are raw-domain (``y - H beta``) while ``scale`` refers to the whitened
    residuals the weights are computed from (the two coincide when the
    covariance is the identity). ``step_norms`` traces the relative step
    size of each IRLS iteration.
    """

    beta: np.ndarray
    weights: np.ndarray
    q_weights: np.ndarray
    leverage_weights: np.ndarray
    ps: np.ndarray
    residuals: np.ndarray
    scale: float
    iterations: int
    converged: bool
    exact_fit: bool = False
    step_norms: list[float] = field(default_factory=list)


def robust_scale(residuals, q: int) -> float:
    """Finite-sample-corrected MAD scale: 1.4826 (1 + 5/(n - q)) median|r - med(r)|.

    Centering on the residual median keeps the scale honest when a large
    same-sign contamination has biased the fit that produced the residuals;
    an uncentered median|r| inflates with that bias and masks the outliers
    it is supposed to expose. ``q`` is the number of fitted parameters;
    requires n > q. Returns 0 when at least half the residuals coincide
    with their median (in particular for an exact fit).
    """
    r = np.asarray(residuals, dtype=float).ravel()
    n = r.size
    if n <= q:
        raise ValueError(f"robust_scale: need n > q, got n={n}, q={q}")
    if not np.all(np.isfinite(r)):
        raise ValueError("robust_scale: non-finite residuals")
    med = float(np.median(r))
    return MAD_CONSISTENCY * (1.0 + 5.0 / (n - q)) * float(np.median(np.abs(r - med)))


def _weighted_ls(A: np.ndarray, b: np.ndarray, row_weights: np.ndarray) -> np.ndarray:
    """Solve the weighted normal equations  (A' W A) beta = A' W b."""
    AW = A * row_weights[:, None]
    M = AW.T @ A
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise NumericalError(
            f"reweighted normal equations are singular (condition estimate {cond:.3e})"
        )
    return np.linalg.solve(M, AW.T @ b)


def _initial_beta(Ht: np.ndarray, yt: np.ndarray, w: np.ndarray, robust_start: bool) -> np.ndarray:
    """Starting point for the IRLS iteration, in the whitened system.

    The robust start is the leverage-weighted least-absolute-value fit (the
    estimator's own limit as the Huber threshold goes to zero), solved as a
    linear program. A least-squares start inherits up to a third of any
    same-sign contamination as trend bias, which inflates the residual
    scale enough to mask the outliers entirely; the LAV start is immune to
    that. Falls back to leverage-preweighted least squares if the LP fails
    or for the classical (non-robust) path, where the first reweighted step
    discards the start anyway.
    """
    if robust_start:
        from scipy.optimize import linprog

        n, q = Ht.shape
        # min sum_i w_i |y_i - h_i beta| via r = u - v, u, v >= 0.
        cost = np.concatenate([np.zeros(q), w, w])
        a_eq = np.hstack([Ht, np.eye(n), -np.eye(n)])
        result = linprog(
            cost,
            A_eq=a_eq,
            b_eq=yt,
            bounds=[(None, None)] * q + [(0.0, None)] * (2 * n),
            method="highs",
        )
        if result.status == 0:
            return np.asarray(result.x[:q], dtype=float)
    return _weighted_ls(Ht * w[:, None], yt * w, np.ones(yt.size))


def irls_solve(
    H,
    y,
    sigma_factor: CovarianceFactor,
    diag: LeverageDiagnostics,
    cfg: HuberConfig = HuberConfig(),
    tol: float = 1e-6,
    max_iter: int = 50,
    *,
    rescale_each_iter: bool = False,
) -> RobustFit:
    """Iteratively reweighted least squares for the Schweppe-type estimator.

    The system is whitened through the covariance factor, a
    leverage-weighted least-absolute-value fit provides the start, and each
    iteration solves the symmetric reweighted normal equations with the
    residual weights ``q(r_i / (w_i s))``.

    The robust scale ``s`` comes from the starting fit's residuals and is
    held fixed, which keeps the iteration on a single convex objective; the
    LAV start makes that scale trustworthy under heavy contamination.
    ``rescale_each_iter=True`` re-estimates ``s`` from the current
    residuals instead, at the cost of possible weight/scale limit cycles.

    Stops when the relative infinity-norm step falls below ``tol``; a fit
    that exhausts ``max_iter`` is returned with ``converged=False``.
    """
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, q = H.shape
    if y.size != n:
        raise ValueError(f"irls_solve: H has {n} rows but y has {y.size} entries")
    if n <= q:
        raise ValueError(f"irls_solve: need n > q, got n={n}, q={q}")
    w = np.asarray(diag.weights, dtype=float).ravel()
    if w.size != n:
        raise ValueError(f"irls_solve: leverage weights length {w.size} != n={n}")

    L = sigma_factor.chol
    Ht = solve_triangular(L, H, lower=True)
    yt = solve_triangular(L, y, lower=True)

    beta = _initial_beta(Ht, yt, w, robust_start=np.isfinite(cfg.c))
    rt = yt - Ht @ beta

    if np.max(np.abs(y - H @ beta)) == 0.0:
        ones = np.ones(n)
        return RobustFit(
            beta=beta, weights=w.copy(), q_weights=ones, leverage_weights=w.copy(),
            ps=np.asarray(diag.ps, dtype=float).copy(), residuals=y - H @ beta,
            scale=0.0, iterations=0, converged=True, exact_fit=True,
        )

    scale = robust_scale(rt, q)
    if scale == 0.0:
        # Majority of residuals identical but not an exact fit: keep ratios finite.
        scale = 1e-12 * float(np.max(np.abs(rt)))

    step_norms: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        qv = huber_q(rt / (w * scale), cfg)
        beta_new = _weighted_ls(Ht, yt, qv)
        step = float(np.max(np.abs(beta_new - beta)) / max(1.0, np.max(np.abs(beta))))
        step_norms.append(step)
        beta = beta_new
        rt = yt - Ht @ beta
        if rescale_each_iter:
            new_scale = robust_scale(rt, q)
            if new_scale > 0:
                scale = new_scale
        if step < tol:
            converged = True
            break

    q_final = huber_q(rt / (w * scale), cfg)
    return RobustFit(
        beta=beta,
        weights=q_final * w,
        q_weights=q_final,
        leverage_weights=w.copy(),
        ps=np.asarray(diag.ps, dtype=float).copy(),
        residuals=y - H @ beta,
        scale=scale,
        iterations=iterations,
        converged=converged,
        step_norms=step_norms,
    )


def estimating_equation_norm(
    H,
    y,
    beta,
    sigma_factor: CovarianceFactor,
    diag: LeverageDiagnostics,
    cfg: HuberConfig,
    scale: float,
) -> float:
    """Norm of the whitened reweighted normal equations at ``beta``.

    Computes ``|| Ht' Q (yt - Ht beta) ||`` with ``Ht = L^-1 H``,
    ``yt = L^-1 y`` and ``Q`` the Huber residual weights of the whitened
    standardized residuals. Zero at the IRLS fixed point; with all weights
    equal to 1 this is exactly ``|| H' Sigma^-1 (y - H beta) ||``.
    """
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float).ravel()
    L = sigma_factor.chol
    Ht = solve_triangular(L, H, lower=True)
    yt = solve_triangular(L, y, lower=True)
    rt = yt - Ht @ beta
    qv = huber_q(rt / (np.asarray(diag.weights, dtype=float) * scale), cfg)
    return float(np.linalg.norm((Ht * qv[:, None]).T @ rt))
