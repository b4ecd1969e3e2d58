"""End-to-end emulator: train on (X, y), predict mean and variance anywhere.

The trend is the quadratic basis fitted by the Schweppe-type GM-estimator
(or plain generalized least squares on the classical path); the residual
process is the squared-exponential GP. Predictions use the precomputed
covariance factor and solve vector, so a trained model is immutable and
cheap to query.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from scipy.linalg import solve_triangular

from .estimator import RobustFit
from .kernel import (
    CovarianceFactor,
    KernelParams,
    Standardizer,
    assemble_covariance,
    factorize,
    quadratic_basis,
)
from .likelihood import FitConfig, alternate_fit
from .robust import huber_psi

__all__ = [
    "EmulatorModel",
    "Prediction",
    "EvalReport",
    "train",
    "predict",
    "predict_batch",
    "evaluate",
    "save_model",
    "load_model",
]

MODEL_FORMAT = "gridgp-model"
MODEL_VERSION = 1


@dataclass
class Prediction:
    """Posterior predictive mean and variance at one test input."""

    mean: float
    variance: float


@dataclass
class EvalReport:
    rmse: float
    mean_abs_err: float
    coverage_95: float


@dataclass
class EmulatorModel:
    """Trained emulator state; treat as immutable after training.

    ``x_train`` holds the standardized training inputs; ``alpha`` is the
    stored solve ``Sigma^-1 r`` that the predictive mean reuses, where
    ``r`` is ``conditioned_residuals``: the trend residuals after Huber
    winsorization in the whitened domain, so an outlier's spike cannot
    leak into nearby predictions through the kernel (on the classical path
    and on clean data this is just ``y - H beta``). ``clamp_warnings``
    counts predictions whose variance had to be clamped up to zero.
    """

    standardizer: Standardizer
    beta: np.ndarray
    params: KernelParams
    x_train: np.ndarray
    factor: CovarianceFactor
    alpha: np.ndarray
    robust: bool
    diagnostics: RobustFit
    conditioned_residuals: np.ndarray = field(default=None)  # type: ignore[assignment]
    clamp_warnings: int = field(default=0)

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]


def train(X, y, robust: bool = True, cfg: FitConfig | None = None) -> EmulatorModel:
    """Fit the emulator on inputs ``X`` (n, p) and one output channel ``y``.

    Inputs are standardized coordinate-wise (robust location/scale) before
    the basis and kernel see them; the transform is stored on the model and
    applied to every test point. Requires n > 2p + 1 training points.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        raise ValueError("train: X must be an (n, p) array")
    if X.shape[0] != y.size:
        raise ValueError(f"train: X has {X.shape[0]} rows but y has {y.size} entries")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("train: non-finite training data")
    n, p = X.shape
    q = 2 * p + 1
    if n <= q:
        raise ValueError(f"train: need at least {q + 1} points for p={p} inputs, got {n}")

    cfg = cfg if cfg is not None else FitConfig()
    if cfg.robust != robust:
        from dataclasses import replace

        cfg = replace(cfg, robust=robust)

    standardizer = Standardizer.fit(X)
    xs = standardizer.transform(X)
    fit, params = alternate_fit(xs, y, cfg)

    H = quadratic_basis(xs)
    residuals = y - H @ fit.beta
    factor = factorize(assemble_covariance(xs, params), params.nugget_floor)

    if robust and not fit.exact_fit and fit.scale > 0:
        # Condition the GP on Huber-winsorized residuals: in the whitened
        # domain each residual is clamped at c * s before the solve (the
        # unweighted threshold: leverage amplification bounds influence on
        # the trend fit, but is too aggressive as a signal cleaner). Clean
        # residuals pass through unchanged; outlier spikes stop at the
        # rejection threshold.
        rt = solve_triangular(factor.chol, residuals, lower=True)
        s = fit.scale
        rt_clean = s * huber_psi(rt / s, cfg.huber)
        conditioned = factor.chol @ rt_clean
        alpha = solve_triangular(factor.chol.T, rt_clean, lower=False)
    else:
        conditioned = residuals
        alpha = factor.solve(residuals)
    return EmulatorModel(
        standardizer=standardizer,
        beta=np.asarray(fit.beta, dtype=float),
        params=params,
        x_train=xs,
        factor=factor,
        alpha=alpha,
        robust=robust,
        diagnostics=fit,
        conditioned_residuals=conditioned,
    )


def _basis_row(x: np.ndarray) -> np.ndarray:
    return np.concatenate([[1.0], x, x * x])


def predict(model: EmulatorModel, x_star) -> Prediction:
    """Posterior mean and variance at one test input (original units)."""
    x = np.asarray(x_star, dtype=float).ravel()
    if x.size != model.input_dim:
        raise ValueError(f"predict: expected {model.input_dim} coordinates, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("predict: non-finite test input")
    xs = (x - model.standardizer.center) / model.standardizer.scale

    ls = model.params.lengthscales
    gap = (model.x_train - xs) / ls
    corr = np.exp(-np.sum(gap * gap, axis=1))
    cvec = model.params.amplitude**2 * corr

    mean = float(_basis_row(xs) @ model.beta + cvec @ model.alpha)
    prior_var = model.params.amplitude**2 + model.params.nugget
    variance = prior_var - float(cvec @ model.factor.solve(cvec))
    if variance < 0.0:
        if variance < -1e-10:
            model.clamp_warnings += 1
        variance = 0.0
    return Prediction(mean=mean, variance=variance)


def predict_batch(model: EmulatorModel, X_star) -> list[Prediction]:
    """Pointwise predictions for every row of ``X_star``.

    Deliberately loops over :func:`predict` so batch results are
    bit-identical to individual calls.
    """
    X_star = np.asarray(X_star, dtype=float)
    if X_star.ndim != 2:
        raise ValueError("predict_batch: expected an (m, p) array")
    return [predict(model, row) for row in X_star]


def evaluate(model: EmulatorModel, X_test, y_test) -> EvalReport:
    """RMSE, mean absolute error, and 95% interval coverage on a test set."""
    X_test = np.asarray(X_test, dtype=float)
    y_test = np.asarray(y_test, dtype=float).ravel()
    if X_test.ndim != 2 or X_test.shape[0] != y_test.size:
        raise ValueError("evaluate: inconsistent test data dimensions")
    if y_test.size == 0:
        raise ValueError("evaluate: empty test set")
    if not (np.all(np.isfinite(X_test)) and np.all(np.isfinite(y_test))):
        raise ValueError("evaluate: non-finite test data")
    preds = predict_batch(model, X_test)
    means = np.array([p.mean for p in preds])
    sds = np.sqrt(np.array([p.variance for p in preds]))
    err = means - y_test
    covered = np.abs(err) <= 1.96 * sds
    return EvalReport(
        rmse=float(np.sqrt(np.mean(err * err))),
        mean_abs_err=float(np.mean(np.abs(err))),
        coverage_95=float(np.mean(covered)),
    )


# --- serialization ---------------------------------------------------------
#
# Structured text (JSON) with every float written as its C99 hex literal,
# which round-trips IEEE doubles exactly and is endian-free.


def _enc_float(v: float) -> str:
    return float(v).hex()


def _enc_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "hex": [float(v).hex() for v in a.ravel()]}


def _dec_array(d: dict) -> np.ndarray:
    flat = np.array([float.fromhex(h) for h in d["hex"]], dtype=float)
    return flat.reshape(d["shape"])


def save_model(model: EmulatorModel, path) -> None:
    """Write the model to a self-describing JSON file (bit-exact round trip)."""
    fit = model.diagnostics
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "robust": model.robust,
        "standardizer": {
            "center": _enc_array(model.standardizer.center),
            "scale": _enc_array(model.standardizer.scale),
        },
        "beta": _enc_array(model.beta),
        "params": {
            "lengthscales": _enc_array(model.params.lengthscales),
            "amplitude": _enc_float(model.params.amplitude),
            "nugget": _enc_float(model.params.nugget),
        },
        "x_train": _enc_array(model.x_train),
        "factor": {
            "chol": _enc_array(model.factor.chol),
            "log_det": _enc_float(model.factor.log_det),
            "jitter": _enc_float(model.factor.jitter),
        },
        "alpha": _enc_array(model.alpha),
        "conditioned_residuals": _enc_array(model.conditioned_residuals),
        "diagnostics": {
            "beta": _enc_array(fit.beta),
            "weights": _enc_array(fit.weights),
            "q_weights": _enc_array(fit.q_weights),
            "leverage_weights": _enc_array(fit.leverage_weights),
            "ps": _enc_array(fit.ps),
            "residuals": _enc_array(fit.residuals),
            "scale": _enc_float(fit.scale),
            "iterations": fit.iterations,
            "converged": fit.converged,
            "exact_fit": fit.exact_fit,
            "step_norms": [_enc_float(v) for v in fit.step_norms],
        },
        "clamp_warnings": model.clamp_warnings,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> EmulatorModel:
    """Read a model written by :func:`save_model`; rejects unknown major versions."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')}")
    dd = doc["diagnostics"]
    fit = RobustFit(
        beta=_dec_array(dd["beta"]),
        weights=_dec_array(dd["weights"]),
        q_weights=_dec_array(dd["q_weights"]),
        leverage_weights=_dec_array(dd["leverage_weights"]),
        ps=_dec_array(dd["ps"]),
        residuals=_dec_array(dd["residuals"]),
        scale=float.fromhex(dd["scale"]),
        iterations=int(dd["iterations"]),
        converged=bool(dd["converged"]),
        exact_fit=bool(dd["exact_fit"]),
        step_norms=[float.fromhex(v) for v in dd["step_norms"]],
    )
    return EmulatorModel(
        standardizer=Standardizer(
            center=_dec_array(doc["standardizer"]["center"]),
            scale=_dec_array(doc["standardizer"]["scale"]),
        ),
        beta=_dec_array(doc["beta"]),
        params=KernelParams(
            lengthscales=_dec_array(doc["params"]["lengthscales"]),
            amplitude=float.fromhex(doc["params"]["amplitude"]),
            nugget=float.fromhex(doc["params"]["nugget"]),
        ),
        x_train=_dec_array(doc["x_train"]),
        factor=CovarianceFactor(
            chol=_dec_array(doc["factor"]["chol"]),
            log_det=float.fromhex(doc["factor"]["log_det"]),
            jitter=float.fromhex(doc["factor"]["jitter"]),
        ),
        alpha=_dec_array(doc["alpha"]),
        robust=bool(doc["robust"]),
        diagnostics=fit,
        conditioned_residuals=_dec_array(doc["conditioned_residuals"]),
        clamp_warnings=int(doc["clamp_warnings"]),
    )
