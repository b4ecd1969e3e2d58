"""Figure rendering for the report paths.

Every CLI report command writes delimited data first and then, unless
plots are disabled, renders the matching figure next to it with
matplotlib. The Agg backend is forced so the CLI works headless.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def plot_predictions(t, y_true, mean, lo, hi, path, ylabel: str = "output") -> None:
    """Predictive mean with the 95% band, and the true values when known."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(8, 3.2))
    t = np.asarray(t)
    ax.fill_between(t, lo, hi, alpha=0.25, color="tab:blue", label="95% interval")
    ax.plot(t, mean, color="tab:blue", lw=1.2, label="predictive mean")
    if y_true is not None:
        ax.plot(t, y_true, "k.", ms=3.5, label="actual")
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_density(grid, density, path, xlabel: str = "output") -> None:
    """Posterior-predictive mixture density over the test horizon."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.plot(grid, density, color="tab:blue", lw=1.4)
    ax.fill_between(grid, density, alpha=0.2, color="tab:blue")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_weights(residual_magnitudes, weights, path) -> None:
    """Estimator weights against residual magnitude (one point per sample)."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.semilogx(np.maximum(residual_magnitudes, 1e-300), weights, ".", ms=5, alpha=0.7)
    ax.set_xlabel("|residual|")
    ax.set_ylabel("weight")
    ax.set_ylim(-0.02, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_weights_vs_magnitude(magnitudes, median_weights, path) -> None:
    """Median weight of corrupted rows as the planted outlier magnitude grows."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.plot(magnitudes, median_weights, "o-", color="tab:red")
    ax.set_xlabel("outlier magnitude (robust sd)")
    ax.set_ylabel("median weight of corrupted rows")
    ax.set_ylim(-0.02, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_rmse_comparison(levels, rmse_robust, rmse_classical, path) -> None:
    """Test RMSE of both models across contamination levels."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    ax.plot(levels, rmse_robust, "o-", label="robust", color="tab:blue")
    ax.plot(levels, rmse_classical, "s--", label="classical", color="tab:orange")
    ax.set_xlabel("contamination fraction (%)")
    ax.set_ylabel("test RMSE")
    ax.set_yscale("log")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
