"""Independent reference implementations used only by the test suite.

Each oracle recomputes a quantity the library produces, by a different
route: naive loops for the projection statistics, a Newton-Raphson solver
for the power flow, textbook formulas with explicit inverses for the GP
prediction, central differences for gradients, and bisection for the
chi-square quantile. None of them share code with the package.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammainc


def chi2_quantile_bisect(prob: float, dof: int, tol: float = 1e-12) -> float:
    """Chi-square quantile by bisection on the regularized-gamma CDF."""
    lo, hi = 0.0, 1.0
    while gammainc(dof / 2.0, hi / 2.0) < prob:
        hi *= 2.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if gammainc(dof / 2.0, mid / 2.0) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def projection_statistics_bruteforce(points: np.ndarray) -> np.ndarray:
    """Naive loop evaluation of the maximum standardized projection distance."""
    points = np.asarray(points, dtype=float)
    m = points.shape[0]
    center = np.median(points, axis=0)
    ps = np.zeros(m)
    for j in range(m):
        direction = points[j] - center
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            continue
        direction = direction / norm
        proj = np.array([points[k] @ direction for k in range(m)])
        med = np.median(proj)
        mad = 1.4826 * np.median(np.abs(proj - med))
        if mad == 0.0:
            continue
        for i in range(m):
            ps[i] = max(ps[i], abs(proj[i] - med) / mad)
    return ps


def gp_predict_textbook(
    x_train: np.ndarray,
    y_train: np.ndarray,
    beta: np.ndarray,
    lengthscales: np.ndarray,
    amplitude: float,
    nugget: float,
    x_star: np.ndarray,
) -> tuple[float, float]:
    """Universal-kriging prediction with explicit matrix inverses.

    Same formulas as the package's predictive equations (plug-in trend
    coefficients, squared-exponential kernel, noise on the diagonal), coded
    directly from the textbook expressions.
    """
    x_train = np.asarray(x_train, dtype=float)
    n = x_train.shape[0]

    def basis_row(x):
        return np.concatenate([[1.0], x, x * x])

    def corr(a, b):
        gap = (a - b) / lengthscales
        return np.exp(-float(gap @ gap))

    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = amplitude**2 * corr(x_train[i], x_train[j])
    K += nugget * np.eye(n)
    K_inv = np.linalg.inv(K)

    r = y_train - np.array([basis_row(x) for x in x_train]) @ beta
    c_vec = np.array([amplitude**2 * corr(x, x_star) for x in x_train])
    mean = float(basis_row(x_star) @ beta + c_vec @ K_inv @ r)
    var = float(amplitude**2 + nugget - c_vec @ K_inv @ c_vec)
    return mean, var


def central_difference_gradient(fun, theta: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Componentwise central differences with a relative step."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for k in range(theta.size):
        h = rel_step * max(abs(theta[k]), 1e-8)
        up = theta.copy()
        dn = theta.copy()
        up[k] += h
        dn[k] -= h
        grad[k] = (fun(up) - fun(dn)) / (2.0 * h)
    return grad


def newton_power_flow(feeder, scenario, tol: float = 1e-10, max_iter: int = 60):
    """Polar Newton-Raphson power flow on the feeder's bus admittance matrix.

    Independent of the sweep solver: assembles Ybus, iterates on the PQ
    mismatch equations with the full Jacobian, slack fixed at 1 pu / 0 rad.
    Returns (v_mag, v_ang) in the feeder's bus order.
    """
    n = feeder.n_buses
    ybus = np.zeros((n, n), dtype=complex)
    for branch in feeder.branches:
        i = feeder.index[branch.from_bus]
        j = feeder.index[branch.to_bus]
        y = 1.0 / (complex(branch.r_ohm, branch.x_ohm) / feeder.z_base_ohm)
        ybus[i, i] += y
        ybus[j, j] += y
        ybus[i, j] -= y
        ybus[j, i] -= y

    s_load = (scenario.p_load_kw + 1j * scenario.q_load_kvar).astype(complex)
    for unit, p_gen in zip(feeder.res_units, scenario.res_p_kw):
        s_load[feeder.index[unit.bus]] -= p_gen
    s_inj = -s_load / feeder.base_kva  # injections positive into the network
    slack = feeder.index[feeder.buses[0].id]
    pq = [k for k in range(n) if k != slack]

    vm = np.ones(n)
    va = np.zeros(n)
    g, b = ybus.real, ybus.imag
    for _ in range(max_iter):
        v = vm * np.exp(1j * va)
        s_calc = v * np.conj(ybus @ v)
        mism = np.concatenate(
            [s_calc.real[pq] - s_inj.real[pq], s_calc.imag[pq] - s_inj.imag[pq]]
        )
        if np.max(np.abs(mism)) < tol:
            return vm, va
        npq = len(pq)
        jac = np.zeros((2 * npq, 2 * npq))
        for a, i in enumerate(pq):
            for c, j in enumerate(pq):
                if i == j:
                    p_i, q_i = s_calc.real[i], s_calc.imag[i]
                    jac[a, c] = -q_i - b[i, i] * vm[i] ** 2
                    jac[a, npq + c] = p_i / vm[i] + g[i, i] * vm[i]
                    jac[npq + a, c] = p_i - g[i, i] * vm[i] ** 2
                    jac[npq + a, npq + c] = q_i / vm[i] - b[i, i] * vm[i]
                else:
                    tij = va[i] - va[j]
                    gij, bij = g[i, j], b[i, j]
                    jac[a, c] = vm[i] * vm[j] * (gij * np.sin(tij) - bij * np.cos(tij))
                    jac[a, npq + c] = vm[i] * (gij * np.cos(tij) + bij * np.sin(tij))
                    jac[npq + a, c] = -vm[i] * vm[j] * (gij * np.cos(tij) + bij * np.sin(tij))
                    jac[npq + a, npq + c] = vm[i] * (gij * np.sin(tij) - bij * np.cos(tij))
        step = np.linalg.solve(jac, -mism)
        va[pq] += step[:npq]
        vm[pq] += step[npq:]
    raise RuntimeError("Newton oracle did not converge")
