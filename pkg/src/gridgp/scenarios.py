"""Scenario generation, dataset assembly, and the outlier-injection harness.

Loads are drawn per bus and per time step from a Gaussian centered on the
base load with 5% relative standard deviation (clipped at zero); RES
injections follow externally supplied per-unit time series, or the bundled
bounded-random-walk generator when no measurements are available.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DatasetFormatError, PowerFlowError
from .feeder import FeederModel
from .powerflow import PowerFlowSolution, Scenario, solve_power_flow
from .robust import robust_location_scale

__all__ = [
    "LOAD_NOISE_FRACTION",
    "Dataset",
    "ContaminationSpec",
    "synthetic_res_series",
    "save_res_series",
    "load_res_series",
    "generate_scenarios",
    "build_dataset",
    "contaminate",
    "save_dataset",
    "load_dataset",
]

LOAD_NOISE_FRACTION = 0.05

OUTPUT_KINDS = ("magnitude", "angle")
FEATURE_MODES = ("reduced", "loads20", "full")
CONTAMINATION_KINDS = ("vertical", "bad_leverage", "good_leverage")

# How many load buses the "loads20" feature mode exposes individually.
REDUCED_LOAD_BUSES = 20


@dataclass
class Dataset:
    """Input matrix, output vector, and the provenance needed to re-solve rows.

    ``scenarios`` is populated when the dataset was built in-process and is
    required by good-leverage contamination (rows must be re-solved through
    the power flow); datasets loaded from CSV carry ``scenarios=None``.
    """

    t: np.ndarray
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    output_bus: int = 0
    output_kind: str = "magnitude"
    feature_mode: str = "reduced"
    scenarios: list[Scenario] | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ContaminationSpec:
    """What to corrupt and by how much.

    ``magnitude`` is expressed in robust standard deviations of the
    affected channel. ``columns`` selects the input features to shift for
    the leverage kinds (default: RES channels for bad leverage, load
    channels for good leverage).
    """

    fraction: float
    kind: str = "vertical"
    magnitude: float = 8.0
    seed: int = 0
    columns: tuple[int, ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.fraction < 0.5:
            raise ValueError(f"contamination fraction must be in [0, 0.5), got {self.fraction}")
        if self.kind not in CONTAMINATION_KINDS:
            raise ValueError(
                f"unknown contamination kind {self.kind!r}; valid: {CONTAMINATION_KINDS}"
            )
        if not np.isfinite(self.magnitude):
            raise ValueError("contamination magnitude must be finite")


def synthetic_res_series(
    feeder: FeederModel,
    n: int,
    seed: int = 0,
    step: float = 0.08,
    init_range: tuple[float, float] = (0.2, 0.8),
) -> dict[str, np.ndarray]:
    """Bounded random walk in [0, 1] per RES unit; stands in for metered series."""
    if n < 1:
        raise ValueError("synthetic_res_series: n must be >= 1")
    rng = np.random.default_rng(seed)
    series: dict[str, np.ndarray] = {}
    for unit in feeder.res_units:
        values = np.empty(n)
        values[0] = rng.uniform(*init_range)
        steps = rng.normal(0.0, step, size=n - 1)
        for t in range(1, n):
            values[t] = min(1.0, max(0.0, values[t - 1] + steps[t - 1]))
        series[unit.unit_id] = values
    return series


def save_res_series(series: dict[str, np.ndarray], path) -> None:
    """Write per-unit series as CSV with header ``t,unit_id,value_pu``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,unit_id,value_pu\n")
        for unit_id in series:
            for t, value in enumerate(series[unit_id]):
                fh.write(f"{t},{unit_id},{float(value):.17g}\n")


def load_res_series(path) -> dict[str, np.ndarray]:
    """Read a series CSV written by :func:`save_res_series` (or external data)."""
    rows: dict[str, dict[int, float]] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "t,unit_id,value_pu":
            raise DatasetFormatError(
                f"expected header 't,unit_id,value_pu', got {header!r}", line=1, source=str(path)
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DatasetFormatError("expected 3 fields", line=lineno, source=str(path))
            try:
                t = int(parts[0])
                value = float(parts[2])
            except ValueError as exc:
                raise DatasetFormatError(str(exc), line=lineno, source=str(path)) from None
            rows.setdefault(parts[1], {})[t] = value
    series = {}
    for unit_id, by_t in rows.items():
        n = max(by_t) + 1
        if sorted(by_t) != list(range(n)):
            raise DatasetFormatError(
                f"series for {unit_id} has gaps in t", source=str(path)
            )
        series[unit_id] = np.array([by_t[t] for t in range(n)])
    return series


def generate_scenarios(
    feeder: FeederModel,
    n: int,
    res_series: dict[str, np.ndarray],
    seed: int = 0,
) -> list[Scenario]:
    """Draw ``n`` load/RES operating points.

    Loads: independent Gaussians N(P_L, (0.05 P_L)^2) per bus per step,
    clipped at zero, with reactive power scaled to keep the base-case power
    factor. RES: capacity times the per-unit series value.
    """
    if n < 1:
        raise ValueError("generate_scenarios: n must be >= 1")
    for unit in feeder.res_units:
        series = res_series.get(unit.unit_id)
        if series is None:
            raise ValueError(f"generate_scenarios: no series for RES unit {unit.unit_id}")
        if len(series) < n:
            raise ValueError(
                f"generate_scenarios: series for {unit.unit_id} has {len(series)} steps, need {n}"
            )
        if np.any(np.asarray(series) < 0) or np.any(np.asarray(series) > 1):
            raise ValueError(f"generate_scenarios: series for {unit.unit_id} not in [0, 1]")

    p_base, q_base = feeder.load_vectors_kw()
    qp_ratio = np.divide(q_base, p_base, out=np.zeros_like(q_base), where=p_base > 0)

    rng = np.random.default_rng(seed)
    draws = rng.normal(loc=p_base, scale=LOAD_NOISE_FRACTION * p_base, size=(n, p_base.size))
    draws = np.maximum(draws, 0.0)

    capacities = np.array([u.capacity_kw for u in feeder.res_units])
    scenarios = []
    for t in range(n):
        res_p = capacities * np.array(
            [res_series[u.unit_id][t] for u in feeder.res_units]
        ) if feeder.res_units else np.zeros(0)
        scenarios.append(
            Scenario(
                t=t,
                p_load_kw=draws[t],
                q_load_kvar=draws[t] * qp_ratio,
                res_p_kw=res_p,
            )
        )
    return scenarios


def _feature_layout(feeder: FeederModel, mode: str) -> tuple[list[str], list[tuple[str, int]]]:
    """Feature names plus (channel-type, index) descriptors for each column.

    "reduced" keeps the trend well-determined at desk scale: the RES
    injections plus one aggregate-load channel (q = 2p+1 stays far below
    n = 100). "loads20" exposes the first 20 load buses individually;
    "full" exposes net P and Q at every non-slack bus.
    """
    names: list[str] = []
    channels: list[tuple[str, int]] = []
    if mode == "reduced":
        for k, unit in enumerate(feeder.res_units):
            names.append(f"res_{unit.unit_id}_kw")
            channels.append(("res", k))
        names.append("load_p_total_kw")
        channels.append(("load_agg", -1))
    elif mode == "loads20":
        for k, unit in enumerate(feeder.res_units):
            names.append(f"res_{unit.unit_id}_kw")
            channels.append(("res", k))
        load_buses = [k for k, b in enumerate(feeder.buses) if b.p_load_kw > 0]
        for k in load_buses[:REDUCED_LOAD_BUSES]:
            names.append(f"load_p_bus{feeder.buses[k].id}_kw")
            channels.append(("load_p", k))
    elif mode == "full":
        for k, bus in enumerate(feeder.buses):
            if k == feeder.order[0]:
                continue
            names.append(f"net_p_bus{bus.id}_kw")
            channels.append(("net_p", k))
        for k, bus in enumerate(feeder.buses):
            if k == feeder.order[0]:
                continue
            names.append(f"net_q_bus{bus.id}_kvar")
            channels.append(("net_q", k))
    else:
        raise ValueError(f"unknown feature mode {mode!r}; valid: {FEATURE_MODES}")
    return names, channels


def _scenario_features(feeder: FeederModel, scenario: Scenario, channels) -> np.ndarray:
    res_by_bus = np.zeros(feeder.n_buses)
    for unit, p in zip(feeder.res_units, scenario.res_p_kw):
        res_by_bus[feeder.index[unit.bus]] += p
    row = np.empty(len(channels))
    for j, (kind, k) in enumerate(channels):
        if kind == "res":
            row[j] = scenario.res_p_kw[k]
        elif kind == "load_agg":
            row[j] = float(np.sum(scenario.p_load_kw))
        elif kind == "load_p":
            row[j] = scenario.p_load_kw[k]
        elif kind == "net_p":
            row[j] = res_by_bus[k] - scenario.p_load_kw[k]
        else:  # net_q
            row[j] = -scenario.q_load_kvar[k]
    return row


def _solve_output(
    feeder: FeederModel, scenario: Scenario, output_index: int, output_kind: str,
    tol: float, max_iter: int,
) -> float:
    solution = solve_power_flow(feeder, scenario, tol=tol, max_iter=max_iter)
    if output_kind == "magnitude":
        return float(solution.v_mag[output_index])
    return float(solution.v_ang[output_index])


def build_dataset(
    feeder: FeederModel,
    scenarios: list[Scenario],
    output_bus: int,
    output_kind: str = "magnitude",
    feature_mode: str = "reduced",
    tol: float = 1e-8,
    max_iter: int = 100,
    threads: int = 1,
) -> Dataset:
    """Solve every scenario and assemble the regression dataset.

    Rows follow scenario (time) order. The reduced feature mode exposes the
    RES active injections plus the first 20 load-bus consumptions; the full
    mode exposes net P and Q injections at every non-slack bus.
    """
    if output_kind not in OUTPUT_KINDS:
        raise ValueError(f"unknown output kind {output_kind!r}; valid: {OUTPUT_KINDS}")
    if output_bus not in feeder.index:
        raise ValueError(f"output bus {output_bus} not in feeder")
    if not scenarios:
        raise ValueError("build_dataset: no scenarios")
    names, channels = _feature_layout(feeder, feature_mode)
    out_idx = feeder.index[output_bus]

    def solve_one(item):
        i, scenario = item
        try:
            return _solve_output(feeder, scenario, out_idx, output_kind, tol, max_iter)
        except PowerFlowError as exc:
            raise PowerFlowError(f"scenario {i} (t={scenario.t}): {exc}") from exc

    indexed = list(enumerate(scenarios))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            y = np.array(list(pool.map(solve_one, indexed)))
    else:
        y = np.array([solve_one(item) for item in indexed])

    X = np.vstack([_scenario_features(feeder, sc, channels) for sc in scenarios])
    t = np.array([sc.t for sc in scenarios], dtype=int)
    return Dataset(
        t=t, X=X, y=y, feature_names=names,
        output_bus=output_bus, output_kind=output_kind, feature_mode=feature_mode,
        scenarios=list(scenarios),
    )


def _default_columns(ds: Dataset, kind: str) -> tuple[int, ...]:
    res_cols = tuple(j for j, n in enumerate(ds.feature_names) if n.startswith("res_"))
    load_cols = tuple(j for j, n in enumerate(ds.feature_names) if n.startswith("load_p_"))
    if kind == "bad_leverage":
        return res_cols or tuple(range(min(4, ds.p)))
    # Good leverage must re-solve the power flow; RES outputs are capacity-
    # bounded, so the shift is applied to load channels.
    return load_cols or tuple(range(min(4, ds.p)))


def _column_scale(values: np.ndarray) -> float:
    _, scale = robust_location_scale(values)
    if scale <= 0:
        sd = float(np.std(values))
        scale = sd if sd > 0 else 1.0
    return scale


def contaminate(
    dataset: Dataset,
    spec: ContaminationSpec,
    feeder: FeederModel | None = None,
) -> tuple[Dataset, np.ndarray]:
    """Return a corrupted copy of the dataset plus the mask of altered rows.

    vertical      : output shifted by ``magnitude`` robust standard
                    deviations of y; inputs untouched.
    bad_leverage  : selected input columns shifted by ``magnitude`` robust
                    standard deviations each; output left inconsistent.
    good_leverage : the same input shift applied to the underlying scenario,
                    then the output re-solved so the point stays on the
                    power-flow surface (requires ``feeder`` and a dataset
                    built in-process).
    """
    n = dataset.n
    count = int(round(spec.fraction * n))
    mask = np.zeros(n, dtype=bool)
    out = replace(
        dataset,
        t=dataset.t.copy(),
        X=dataset.X.copy(),
        y=dataset.y.copy(),
        feature_names=list(dataset.feature_names),
        scenarios=list(dataset.scenarios) if dataset.scenarios is not None else None,
    )
    if count == 0:
        return out, mask

    rng = np.random.default_rng(spec.seed)
    rows = np.sort(rng.choice(n, size=count, replace=False))
    mask[rows] = True

    if spec.kind == "vertical":
        _, s_y = robust_location_scale(dataset.y)
        if s_y <= 0:
            raise ValueError("contaminate: output channel has zero robust scale")
        out.y[rows] = out.y[rows] + spec.magnitude * s_y
        return out, mask

    columns = spec.columns if spec.columns is not None else _default_columns(dataset, spec.kind)
    if not columns:
        raise ValueError("contaminate: no input columns to shift")
    if any(j < 0 or j >= dataset.p for j in columns):
        raise ValueError(f"contaminate: column out of range for p={dataset.p}")
    shifts = {j: spec.magnitude * _column_scale(dataset.X[:, j]) for j in columns}

    if spec.kind == "bad_leverage":
        for j, shift in shifts.items():
            out.X[rows, j] += shift
        return out, mask

    # good_leverage
    if feeder is None:
        raise ValueError("contaminate: good_leverage requires the feeder model")
    if out.scenarios is None:
        raise ValueError(
            "contaminate: good_leverage requires a dataset built in-process "
            "(the generating scenarios are needed to re-solve the outputs)"
        )
    res_like = [j for j in columns if dataset.feature_names[j].startswith("res_")]
    if res_like:
        raise ValueError(
            "contaminate: good_leverage shifts must target load channels; "
            f"RES channels are capacity-bounded (offending columns: {res_like})"
        )
    _, layout = _feature_layout(feeder, dataset.feature_mode)
    out_idx = feeder.index[dataset.output_bus]

    def qp_ratio(k: int) -> float:
        bus = feeder.buses[k]
        return bus.q_load_kvar / bus.p_load_kw if bus.p_load_kw > 0 else 0.0

    for i in rows:
        sc = out.scenarios[i]
        p_load = sc.p_load_kw.copy()
        q_load = sc.q_load_kvar.copy()
        for j, shift in shifts.items():
            kind, k = layout[j]
            if kind == "load_agg":
                # A system-wide surge: scale every load, preserving power factors.
                total = float(np.sum(p_load))
                factor = max(0.0, (total + shift) / total) if total > 0 else 1.0
                p_load *= factor
                q_load *= factor
            elif kind in ("load_p", "net_p"):
                p_load[k] = max(0.0, p_load[k] + shift)
                q_load[k] = p_load[k] * qp_ratio(k)
            else:
                raise ValueError(
                    f"contaminate: cannot apply good_leverage shift to channel {kind!r}"
                )
        shifted = Scenario(t=sc.t, p_load_kw=p_load, q_load_kvar=q_load, res_p_kw=sc.res_p_kw)
        out.scenarios[i] = shifted
        out.X[i] = _scenario_features(feeder, shifted, layout)
        out.y[i] = _solve_output(feeder, shifted, out_idx, dataset.output_kind, 1e-8, 100)
    return out, mask


def save_dataset(dataset: Dataset, path) -> None:
    """Write the dataset as CSV with header ``t,x_1..x_p,y`` (17 significant digits)."""
    cols = ",".join(f"x_{j + 1}" for j in range(dataset.p))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"t,{cols},y\n")
        for i in range(dataset.n):
            xs = ",".join(f"{v:.17g}" for v in dataset.X[i])
            fh.write(f"{int(dataset.t[i])},{xs},{dataset.y[i]:.17g}\n")


def load_dataset(path) -> Dataset:
    """Read a dataset CSV written by :func:`save_dataset`."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        fields = header.split(",")
        if len(fields) < 3 or fields[0] != "t" or fields[-1] != "y":
            raise DatasetFormatError(
                "expected header 't,x_1..x_p,y'", line=1, source=str(path)
            )
        p = len(fields) - 2
        for j, name in enumerate(fields[1:-1]):
            if name != f"x_{j + 1}":
                raise DatasetFormatError(
                    f"expected column x_{j + 1}, got {name!r}", line=1, source=str(path)
                )
        ts, xs, ys = [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != p + 2:
                raise DatasetFormatError(
                    f"expected {p + 2} fields, got {len(parts)}", line=lineno, source=str(path)
                )
            try:
                ts.append(int(parts[0]))
                xs.append([float(v) for v in parts[1:-1]])
                ys.append(float(parts[-1]))
            except ValueError as exc:
                raise DatasetFormatError(str(exc), line=lineno, source=str(path)) from None
    if not ys:
        raise DatasetFormatError("dataset has no rows", source=str(path))
    return Dataset(
        t=np.asarray(ts, dtype=int),
        X=np.asarray(xs, dtype=float),
        y=np.asarray(ys, dtype=float),
        feature_names=[f"x_{j + 1}" for j in range(p)],
    )
