"""Experiment orchestration behind the CLI: configs, manifests, presets.

Every run is a pure function of its configuration and seeds, so rerunning
a command against the same manifest reproduces its outputs byte for byte.
Seeds for the individual stages are derived from the experiment seed with
fixed offsets; nothing in the written artifacts depends on wall-clock time
or absolute paths.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import plots
from .emulator import EmulatorModel, evaluate, load_model, predict_batch, save_model, train
from .exceptions import DatasetFormatError
from .feeder import FeederModel, bundled_feeder_path, feeder_sha256, load_feeder
from .likelihood import FitConfig, OptimizerConfig
from .robust import HuberConfig
from .scenarios import (
    ContaminationSpec,
    Dataset,
    build_dataset,
    contaminate,
    generate_scenarios,
    load_dataset,
    save_dataset,
    save_res_series,
    synthetic_res_series,
)

MANIFEST_FORMAT = "gridgp-manifest"
MANIFEST_VERSION = 1

# Seed offsets for the derived stage seeds.
_SERIES_OFFSET = 1
_LOADS_OFFSET = 2
_CONTAMINATION_OFFSET = 3


@dataclass
class ExperimentConfig:
    """Settings for one data-generation/training experiment."""

    feeder: str | None = None  # None selects the bundled 33-bus feeder
    n_train: int = 100
    n_test: int = 60
    output_bus: int = 19
    output_kind: str = "magnitude"
    feature_mode: str = "reduced"
    seed: int = 2026
    res_step: float = 0.08
    contamination: ContaminationSpec | None = None
    huber_c: float = 1.5
    outer_max: int = 5
    restarts: int = 4
    max_evals: int = 150
    irls_tol: float = 1e-6
    irls_max_iter: int = 50
    threads: int = 1

    def validate(self) -> None:
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be positive")
        if self.feeder is not None and not os.path.exists(self.feeder):
            raise ValueError(f"feeder file does not exist: {self.feeder}")
        if self.output_kind not in ("magnitude", "angle"):
            raise ValueError(f"unknown output kind {self.output_kind!r}")
        if self.feature_mode not in ("reduced", "loads20", "full"):
            raise ValueError(f"unknown feature mode {self.feature_mode!r}")

    def feeder_path(self) -> str:
        return self.feeder if self.feeder is not None else bundled_feeder_path()

    def load_feeder(self) -> FeederModel:
        return load_feeder(self.feeder_path())

    def fit_config(self, robust: bool) -> FitConfig:
        return FitConfig(
            robust=robust,
            huber=HuberConfig(c=self.huber_c),
            irls_tol=self.irls_tol,
            irls_max_iter=self.irls_max_iter,
            outer_max=self.outer_max,
            optimizer=OptimizerConfig(
                max_evals=self.max_evals, restarts=self.restarts, seed=self.seed
            ),
        )


def config_from_json(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"bad JSON: {exc}", source=str(path)) from None
    if not isinstance(raw, dict):
        raise DatasetFormatError("config must be a JSON object", source=str(path))
    cont = raw.pop("contamination", None)
    known = {f for f in ExperimentConfig.__dataclass_fields__ if f != "contamination"}
    unknown = set(raw) - known
    if unknown:
        raise DatasetFormatError(f"unknown config keys: {sorted(unknown)}", source=str(path))
    cfg = ExperimentConfig(**raw)
    if cont is not None:
        columns = cont.get("columns")
        cfg.contamination = ContaminationSpec(
            fraction=cont["fraction"],
            kind=cont.get("kind", "vertical"),
            magnitude=cont.get("magnitude", 8.0),
            seed=cont.get("seed", cfg.seed + _CONTAMINATION_OFFSET),
            columns=tuple(columns) if columns is not None else None,
        )
    cfg.validate()
    return cfg


def _config_echo(cfg: ExperimentConfig) -> dict:
    doc = asdict(cfg)
    return doc


def write_manifest(path, cfg: ExperimentConfig, files: dict[str, str]) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "config": _config_echo(cfg),
        "seeds": {
            "experiment": cfg.seed,
            "res_series": cfg.seed + _SERIES_OFFSET,
            "loads": cfg.seed + _LOADS_OFFSET,
            "contamination": cfg.contamination.seed if cfg.contamination else None,
        },
        "feeder_sha256": feeder_sha256(cfg.feeder_path()),
        "files": files,
    }
    _write_json(path, doc)


def read_manifest(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MANIFEST_FORMAT:
        raise DatasetFormatError(f"not a {MANIFEST_FORMAT} file", source=str(path))
    if doc.get("version") != MANIFEST_VERSION:
        raise DatasetFormatError(
            f"unsupported manifest version {doc.get('version')}", source=str(path)
        )
    raw = dict(doc["config"])
    cont = raw.pop("contamination", None)
    cfg = ExperimentConfig(**raw)
    if cont is not None:
        cfg.contamination = ContaminationSpec(
            fraction=cont["fraction"],
            kind=cont["kind"],
            magnitude=cont["magnitude"],
            seed=cont["seed"],
            columns=tuple(cont["columns"]) if cont.get("columns") is not None else None,
        )
    cfg.validate()
    return cfg


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def generate_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, dict]:
    """Build the train/test datasets the manifest describes (in memory)."""
    cfg.validate()
    feeder = cfg.load_feeder()
    n_total = cfg.n_train + cfg.n_test
    series = synthetic_res_series(
        feeder, n_total, seed=cfg.seed + _SERIES_OFFSET, step=cfg.res_step
    )
    scenarios = generate_scenarios(feeder, n_total, series, seed=cfg.seed + _LOADS_OFFSET)
    ds = build_dataset(
        feeder,
        scenarios,
        output_bus=cfg.output_bus,
        output_kind=cfg.output_kind,
        feature_mode=cfg.feature_mode,
        threads=cfg.threads,
    )
    train_ds = replace(
        ds,
        t=ds.t[: cfg.n_train],
        X=ds.X[: cfg.n_train],
        y=ds.y[: cfg.n_train],
        scenarios=ds.scenarios[: cfg.n_train],
    )
    test_ds = replace(
        ds,
        t=ds.t[cfg.n_train :],
        X=ds.X[cfg.n_train :],
        y=ds.y[cfg.n_train :],
        scenarios=ds.scenarios[cfg.n_train :],
    )
    return train_ds, test_ds, series


def run_generate(cfg: ExperimentConfig, out_dir) -> dict[str, str]:
    """generate command: train/test CSVs, the RES series, and the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    train_ds, test_ds, series = generate_datasets(cfg)
    p = 2 * train_ds.p + 1
    if cfg.n_train <= p:
        raise ValueError(
            f"n_train={cfg.n_train} cannot identify the quadratic trend "
            f"(needs more than {p} points for p={train_ds.p} features)"
        )
    files = {"train": "train.csv", "test": "test.csv", "res_series": "res_series.csv"}
    save_dataset(train_ds, os.path.join(out_dir, files["train"]))
    save_dataset(test_ds, os.path.join(out_dir, files["test"]))
    save_res_series(series, os.path.join(out_dir, files["res_series"]))
    write_manifest(os.path.join(out_dir, "manifest.json"), cfg, files)
    return files


def run_contaminate(
    data_path,
    spec: ContaminationSpec,
    out_dir,
    feeder: FeederModel | None = None,
    manifest_path=None,
    which: str = "train",
) -> tuple[str, str]:
    """contaminate command: corrupted CSV plus a mask CSV of altered row indices.

    ``good_leverage`` needs the generating scenarios; pass the manifest the
    dataset was generated from and the rows are rebuilt in-process and
    checked against the CSV before the outputs are re-solved.
    """
    os.makedirs(out_dir, exist_ok=True)
    dataset = load_dataset(data_path)
    if manifest_path is not None:
        cfg = read_manifest(manifest_path)
        train_ds, test_ds, _ = generate_datasets(cfg)
        rebuilt = train_ds if which == "train" else test_ds
        if rebuilt.X.shape != dataset.X.shape or not (
            np.allclose(rebuilt.X, dataset.X, rtol=0, atol=0)
            and np.allclose(rebuilt.y, dataset.y, rtol=0, atol=0)
        ):
            raise ValueError(
                f"{data_path} does not match the {which} dataset regenerated "
                f"from {manifest_path}"
            )
        dataset = rebuilt
        feeder = cfg.load_feeder()
    corrupted, mask = contaminate(dataset, spec, feeder)
    data_out = os.path.join(out_dir, "contaminated.csv")
    mask_out = os.path.join(out_dir, "mask.csv")
    save_dataset(corrupted, data_out)
    with open(mask_out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("row\n")
        for idx in np.flatnonzero(mask):
            fh.write(f"{idx}\n")
    return data_out, mask_out


def run_train(
    data_path,
    out_dir,
    robust: bool,
    cfg: ExperimentConfig,
    render_plots: bool = True,
) -> str:
    """train command: serialized model plus a diagnostics JSON (and weights plot)."""
    os.makedirs(out_dir, exist_ok=True)
    dataset = load_dataset(data_path)
    model = train(dataset.X, dataset.y, robust=robust, cfg=cfg.fit_config(robust))
    tag = "robust" if robust else "classical"
    model_path = os.path.join(out_dir, f"model_{tag}.json")
    save_model(model, model_path)

    fit = model.diagnostics
    diag_doc = {
        "robust": robust,
        "n": int(dataset.n),
        "p": int(dataset.p),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "scale": fit.scale,
        "irls_step_norms": fit.step_norms,
        "weights": fit.weights.tolist(),
        "q_weights": fit.q_weights.tolist(),
        "leverage_weights": fit.leverage_weights.tolist(),
        "projection_statistics": fit.ps.tolist(),
        "residuals": fit.residuals.tolist(),
        "kernel": {
            "lengthscales": model.params.lengthscales.tolist(),
            "amplitude": model.params.amplitude,
            "nugget": model.params.nugget,
        },
    }
    _write_json(os.path.join(out_dir, f"diagnostics_{tag}.json"), diag_doc)
    if render_plots:
        plots.plot_weights(
            np.abs(fit.residuals), fit.weights, os.path.join(out_dir, f"weights_{tag}.png")
        )
    return model_path


def _prediction_table(model: EmulatorModel, dataset: Dataset) -> dict[str, np.ndarray]:
    preds = predict_batch(model, dataset.X)
    mean = np.array([p.mean for p in preds])
    var = np.array([p.variance for p in preds])
    sd = np.sqrt(var)
    return {
        "t": dataset.t,
        "mean": mean,
        "variance": var,
        "lo95": mean - 1.96 * sd,
        "hi95": mean + 1.96 * sd,
    }


def mixture_density(mean: np.ndarray, variance: np.ndarray, n_grid: int = 200):
    """Equal-weight Gaussian-mixture density over a +-4 sd grid."""
    sd = np.sqrt(np.maximum(variance, 1e-300))
    lo = float(np.min(mean - 4.0 * sd))
    hi = float(np.max(mean + 4.0 * sd))
    grid = np.linspace(lo, hi, n_grid)
    z = (grid[:, None] - mean[None, :]) / sd[None, :]
    dens = np.mean(np.exp(-0.5 * z * z) / (sd[None, :] * math.sqrt(2.0 * math.pi)), axis=1)
    return grid, dens


def run_predict(model_path, data_path, out_dir, render_plots: bool = True) -> str:
    """predict command: per-point predictions CSV, density CSV, and figures."""
    os.makedirs(out_dir, exist_ok=True)
    model = load_model(model_path)
    dataset = load_dataset(data_path)
    table = _prediction_table(model, dataset)
    pred_path = os.path.join(out_dir, "predictions.csv")
    with open(pred_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,mean,variance,lo95,hi95\n")
        for i in range(dataset.n):
            fh.write(
                f"{int(table['t'][i])},{table['mean'][i]:.17g},{table['variance'][i]:.17g},"
                f"{table['lo95'][i]:.17g},{table['hi95'][i]:.17g}\n"
            )
    grid, dens = mixture_density(table["mean"], table["variance"])
    with open(os.path.join(out_dir, "density.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("value,density\n")
        for v, d in zip(grid, dens):
            fh.write(f"{v:.17g},{d:.17g}\n")
    if render_plots:
        plots.plot_predictions(
            table["t"], dataset.y,
            table["mean"], table["lo95"], table["hi95"],
            os.path.join(out_dir, "predictions.png"),
        )
        plots.plot_density(grid, dens, os.path.join(out_dir, "density.png"))
    return pred_path


def run_evaluate(model_paths: list, data_path, out_dir) -> str:
    """evaluate command: RMSE / MAE / coverage per model, plus a paired row."""
    os.makedirs(out_dir, exist_ok=True)
    dataset = load_dataset(data_path)
    rows = []
    for path in model_paths:
        model = load_model(path)
        rep = evaluate(model, dataset.X, dataset.y)
        rows.append(
            {
                "model": os.path.basename(str(path)),
                "robust": model.robust,
                "rmse": rep.rmse,
                "mae": rep.mean_abs_err,
                "coverage_95": rep.coverage_95,
            }
        )
    doc: dict = {"models": rows}
    if len(rows) == 2:
        doc["comparison"] = {
            "rmse_ratio": rows[0]["rmse"] / rows[1]["rmse"] if rows[1]["rmse"] > 0 else math.inf,
            "lower_rmse": rows[0]["model"] if rows[0]["rmse"] <= rows[1]["rmse"] else rows[1]["model"],
        }
    _write_json(os.path.join(out_dir, "report.json"), doc)
    report_csv = os.path.join(out_dir, "report.csv")
    with open(report_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("model,robust,rmse,mae,coverage_95\n")
        for row in rows:
            fh.write(
                f"{row['model']},{row['robust']},{row['rmse']:.17g},"
                f"{row['mae']:.17g},{row['coverage_95']:.17g}\n"
            )
    return report_csv


# --- reproduce presets ------------------------------------------------------

PRESETS = {
    # Contamination sweep with enough replicates for stable medians.
    "fig5": {"levels": (0.0, 0.05, 0.10, 0.15, 0.20, 0.25), "replicates": 20},
    # Same pipeline at smoke scale (used for determinism checks and CI).
    "fig5-smoke": {"levels": (0.0, 0.25), "replicates": 2},
}

_REPRODUCE_BASE_SEED = 20260810
_WEIGHT_MAGNITUDES = (2.0, 4.0, 8.0, 16.0)


def _reproduce_fit_overrides(cfg: ExperimentConfig) -> ExperimentConfig:
    # The sweep trains hundreds of models; trim the search budget to keep
    # the full preset well inside its runtime envelope.
    return replace(cfg, outer_max=3, restarts=2, max_evals=80)


def run_reproduce(preset: str, out_dir, threads: int = 1, render_plots: bool = True) -> dict:
    """reproduce command: contamination sweep, weight curve, example predictions.

    Workflow per replicate: generate a fresh seeded dataset, contaminate
    the training half at each level, train the robust and classical models,
    and evaluate both on the clean test half. Every artifact lands under
    ``out_dir``; the summary states whether the robust model beat the
    classical one at the highest contamination level (median over
    replicates).
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
    spec = PRESETS[preset]
    levels: tuple[float, ...] = spec["levels"]
    replicates: int = spec["replicates"]
    os.makedirs(out_dir, exist_ok=True)

    base_cfg = _reproduce_fit_overrides(ExperimentConfig(threads=threads))
    results = {level: {"robust": [], "classical": []} for level in levels}

    for rep_idx in range(replicates):
        cfg = replace(base_cfg, seed=_REPRODUCE_BASE_SEED + 1000 * rep_idx)
        rep_dir = os.path.join(out_dir, f"replicate_{rep_idx:02d}")
        os.makedirs(rep_dir, exist_ok=True)
        train_ds, test_ds, _ = generate_datasets(cfg)
        save_dataset(train_ds, os.path.join(rep_dir, "train.csv"))
        save_dataset(test_ds, os.path.join(rep_dir, "test.csv"))
        write_manifest(
            os.path.join(rep_dir, "manifest.json"), cfg,
            {"train": "train.csv", "test": "test.csv"},
        )
        for level in levels:
            cont_spec = ContaminationSpec(
                fraction=level, kind="vertical", magnitude=8.0,
                seed=cfg.seed + _CONTAMINATION_OFFSET,
            )
            corrupted, mask = contaminate(train_ds, cont_spec)
            level_dir = os.path.join(rep_dir, f"level_{int(round(level * 100)):02d}")
            os.makedirs(level_dir, exist_ok=True)
            save_dataset(corrupted, os.path.join(level_dir, "train_contaminated.csv"))
            with open(os.path.join(level_dir, "mask.csv"), "w", encoding="utf-8", newline="\n") as fh:
                fh.write("row\n")
                for idx in np.flatnonzero(mask):
                    fh.write(f"{idx}\n")
            for robust in (True, False):
                tag = "robust" if robust else "classical"
                model = train(
                    corrupted.X, corrupted.y, robust=robust, cfg=cfg.fit_config(robust)
                )
                save_model(model, os.path.join(level_dir, f"model_{tag}.json"))
                rep_report = evaluate(model, test_ds.X, test_ds.y)
                results[level][tag].append(rep_report.rmse)

    # Weight-vs-magnitude curve on the first replicate's data.
    cfg0 = replace(base_cfg, seed=_REPRODUCE_BASE_SEED)
    train0, test0, _ = generate_datasets(cfg0)
    weight_rows = []
    for magnitude in _WEIGHT_MAGNITUDES:
        cont_spec = ContaminationSpec(
            fraction=0.25, kind="vertical", magnitude=magnitude,
            seed=cfg0.seed + _CONTAMINATION_OFFSET,
        )
        corrupted, mask = contaminate(train0, cont_spec)
        model = train(corrupted.X, corrupted.y, robust=True, cfg=cfg0.fit_config(True))
        weight_rows.append(
            (magnitude, float(np.median(model.diagnostics.weights[mask])))
        )
    with open(os.path.join(out_dir, "weights_vs_magnitude.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("magnitude_sd,median_weight\n")
        for magnitude, weight in weight_rows:
            fh.write(f"{magnitude:.17g},{weight:.17g}\n")

    # Example prediction artifacts at the highest level of replicate 0.
    top_level = levels[-1]
    cont_spec = ContaminationSpec(
        fraction=top_level, kind="vertical", magnitude=8.0,
        seed=cfg0.seed + _CONTAMINATION_OFFSET,
    )
    corrupted0, _ = contaminate(train0, cont_spec)
    model0 = train(corrupted0.X, corrupted0.y, robust=True, cfg=cfg0.fit_config(True))
    table = _prediction_table(model0, test0)
    with open(os.path.join(out_dir, "example_predictions.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,actual,mean,variance,lo95,hi95\n")
        for i in range(test0.n):
            fh.write(
                f"{int(table['t'][i])},{test0.y[i]:.17g},{table['mean'][i]:.17g},"
                f"{table['variance'][i]:.17g},{table['lo95'][i]:.17g},{table['hi95'][i]:.17g}\n"
            )
    grid, dens = mixture_density(table["mean"], table["variance"])
    with open(os.path.join(out_dir, "example_density.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("value,density\n")
        for v, d in zip(grid, dens):
            fh.write(f"{v:.17g},{d:.17g}\n")

    # Summary table and verdict.
    summary_rows = []
    for level in levels:
        for tag in ("robust", "classical"):
            rmses = np.asarray(results[level][tag])
            summary_rows.append(
                {
                    "level_pct": int(round(level * 100)),
                    "model": tag,
                    "rmse_median": float(np.median(rmses)),
                    "rmse_mean": float(np.mean(rmses)),
                }
            )
    win_fractions = {}
    for level in levels:
        r = np.asarray(results[level]["robust"])
        c = np.asarray(results[level]["classical"])
        win_fractions[int(round(level * 100))] = float(np.mean(r < c))
    top = int(round(levels[-1] * 100))
    robust_at_top = float(np.median(np.asarray(results[levels[-1]]["robust"])))
    classical_at_top = float(np.median(np.asarray(results[levels[-1]]["classical"])))
    summary = {
        "preset": preset,
        "base_seed": _REPRODUCE_BASE_SEED,
        "levels_pct": [int(round(level * 100)) for level in levels],
        "replicates": replicates,
        "rows": summary_rows,
        "win_fraction_by_level": win_fractions,
        "weights_vs_magnitude": [
            {"magnitude_sd": m, "median_weight": w} for m, w in weight_rows
        ],
        "robust_rmse_median_at_top": robust_at_top,
        "classical_rmse_median_at_top": classical_at_top,
        "verdict": "PASS" if robust_at_top < classical_at_top else "FAIL",
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    with open(os.path.join(out_dir, "summary.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("level_pct,model,rmse_median,rmse_mean\n")
        for row in summary_rows:
            fh.write(
                f"{row['level_pct']},{row['model']},{row['rmse_median']:.17g},"
                f"{row['rmse_mean']:.17g}\n"
            )

    if render_plots:
        med_r = [float(np.median(np.asarray(results[level]["robust"]))) for level in levels]
        med_c = [float(np.median(np.asarray(results[level]["classical"]))) for level in levels]
        plots.plot_rmse_comparison(
            [level * 100 for level in levels], med_r, med_c,
            os.path.join(out_dir, "rmse_comparison.png"),
        )
        plots.plot_weights_vs_magnitude(
            [m for m, _ in weight_rows], [w for _, w in weight_rows],
            os.path.join(out_dir, "weights_vs_magnitude.png"),
        )
        plots.plot_predictions(
            table["t"], test0.y, table["mean"], table["lo95"], table["hi95"],
            os.path.join(out_dir, "example_predictions.png"),
            ylabel=f"bus {test0.output_bus} {test0.output_kind}",
        )
        plots.plot_density(grid, dens, os.path.join(out_dir, "example_density.png"))
    return summary
