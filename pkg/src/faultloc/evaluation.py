"""Error metric, per-fault-group aggregation, repeated-seed stability runs,
method comparison tables, and empirical CDFs."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateLineError, EmptyInputError
from .grn import GrnHyperparams, TrainConfig, forward, train
from .phasor import FaultLoop

FAULT_GROUPS = ("PG", "PPG", "PP", "PPP")

_GROUP_OF = {
    FaultLoop.AG: "PG", FaultLoop.BG: "PG", FaultLoop.CG: "PG",
    FaultLoop.AB: "PP", FaultLoop.BC: "PP", FaultLoop.CA: "PP",
    FaultLoop.ABG: "PPG", FaultLoop.BCG: "PPG", FaultLoop.CAG: "PPG",
    FaultLoop.ABC: "PPP",
}


def fault_group(fault_type: FaultLoop | str) -> str:
    if isinstance(fault_type, str):
        fault_type = FaultLoop(fault_type)
    return _GROUP_OF[fault_type]


def location_error(d_est_km: float, d_true_km: float, d_max_km: float) -> float:
    """Absolute distance error as a percentage of line length."""
    if d_max_km <= 0:
        raise DegenerateLineError(f"d_max_km must be positive, got {d_max_km}")
    return abs((d_est_km - d_true_km) / d_max_km) * 100.0


@dataclass(frozen=True)
class ErrorRecord:
    scenario_id: str
    method: str
    error_pct: float
    fault_group: str


def empirical_cdf(errors) -> list[tuple[float, float]]:
    """Right-continuous step points (x, F(x)) at the distinct sample values."""
    values = sorted(float(v) for v in errors)
    if not values:
        raise EmptyInputError("empirical CDF of an empty list")
    n = len(values)
    points = []
    for i, v in enumerate(values):
        if i + 1 == n or values[i + 1] != v:
            points.append((v, (i + 1) / n))
    return points


def cdf_value(points: list[tuple[float, float]], x: float) -> float:
    """F(x) of a step CDF given its points."""
    result = 0.0
    for xv, fv in points:
        if xv <= x:
            result = fv
        else:
            break
    return result


def write_cdf_csv(points: list[tuple[float, float]], path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["error_pct", "cumulative_fraction"])
        for x, f in points:
            writer.writerow([repr(float(x)), repr(float(f))])
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# method comparison table
# ---------------------------------------------------------------------------

@dataclass
class ComparisonTable:
    """Mean percentage error per method and fault group; None renders blank."""

    methods: list[str]
    cells: dict[str, dict[str, float | None]]
    counts: dict[str, dict[str, int]]

    def to_csv(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", *FAULT_GROUPS, "ALL"])
            for method in self.methods:
                row = [method]
                for group in (*FAULT_GROUPS, "ALL"):
                    value = self.cells[method][group]
                    row.append("" if value is None else repr(float(value)))
                writer.writerow(row)
        os.replace(tmp, path)


def compare_methods(records: list[ErrorRecord], method_order: list[str] | None = None) -> ComparisonTable:
    """Aggregate mean error per (method, group); a method's ALL cell stays
    blank unless the method covered every group."""
    by_method: dict[str, dict[str, list[float]]] = {}
    for rec in records:
        by_method.setdefault(rec.method, {g: [] for g in FAULT_GROUPS})[rec.fault_group].append(rec.error_pct)
    methods = method_order or sorted(by_method)
    cells: dict[str, dict[str, float | None]] = {}
    counts: dict[str, dict[str, int]] = {}
    for method in methods:
        groups = by_method.get(method, {g: [] for g in FAULT_GROUPS})
        cells[method] = {}
        counts[method] = {}
        for group in FAULT_GROUPS:
            vals = groups[group]
            counts[method][group] = len(vals)
            cells[method][group] = float(np.mean(vals)) if vals else None
        if all(groups[g] for g in FAULT_GROUPS):
            everything = [v for g in FAULT_GROUPS for v in groups[g]]
            cells[method]["ALL"] = float(np.mean(everything))
            counts[method]["ALL"] = len(everything)
        else:
            cells[method]["ALL"] = None
            counts[method]["ALL"] = sum(counts[method][g] for g in FAULT_GROUPS)
    return ComparisonTable(methods=list(methods), cells=cells, counts=counts)


# ---------------------------------------------------------------------------
# boxplot-style summaries and the repeated-seed stability protocol
# ---------------------------------------------------------------------------

def summarize(values) -> dict[str, float]:
    """Five-number summary plus Tukey 1.5*IQR whiskers."""
    arr = np.asarray(sorted(float(v) for v in values), dtype=float)
    if arr.size == 0:
        raise EmptyInputError("summary of an empty list")
    q1, med, q3 = (float(np.percentile(arr, p)) for p in (25, 50, 75))
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    whisk_lo = float(inside[0]) if inside.size else float(arr[0])
    whisk_hi = float(inside[-1]) if inside.size else float(arr[-1])
    return {
        "median": med, "q1": q1, "q3": q3,
        "min": float(arr[0]), "max": float(arr[-1]),
        "whisker_low": whisk_lo, "whisker_high": whisk_hi,
    }


@dataclass
class RunDistribution:
    """Per-seed aggregate errors by fault group (plus ALL), with summaries."""

    seeds: list[int]
    values: dict[str, list[float]]
    summaries: dict[str, dict[str, float]] = field(default_factory=dict)
    median_seed: int = -1

    def finalize(self) -> "RunDistribution":
        self.summaries = {group: summarize(vals) for group, vals in self.values.items()}
        return self

    def to_json(self) -> str:
        return json.dumps({
            "seeds": self.seeds,
            "median_seed": self.median_seed,
            "groups": {
                group: {
                    "values": self.values[group],
                    "summary": self.summaries.get(group, {}),
                } for group in sorted(self.values)
            },
        }, indent=2, sort_keys=True)


@dataclass(frozen=True)
class TestRowMeta:
    scenario_id: str
    fault_type: str
    d_est_km: float
    d_true_km: float
    d_max_km: float


def evaluate_model_errors(
    model_inputs: np.ndarray,
    metas: list[TestRowMeta],
    params,
    scaler,
) -> dict[str, float]:
    """Mean percentage error per group (and ALL) for one trained model."""
    pred, _ = forward(params, model_inputs, mode="infer")
    corrections = scaler.inverse_target(pred)
    per_group: dict[str, list[float]] = {g: [] for g in FAULT_GROUPS}
    for meta, corr in zip(metas, corrections):
        d_corr = min(max(meta.d_est_km + float(corr), 0.0), meta.d_max_km)
        err = location_error(d_corr, meta.d_true_km, meta.d_max_km)
        per_group[fault_group(meta.fault_type)].append(err)
    out = {g: float(np.mean(v)) if v else math.nan for g, v in per_group.items()}
    out["ALL"] = float(np.mean([e for v in per_group.values() for e in v]))
    return out


def repeated_runs(
    hp: GrnHyperparams,
    train_inputs: np.ndarray,
    train_targets_std: np.ndarray,
    test_inputs: np.ndarray,
    test_metas: list[TestRowMeta],
    scaler,
    base_config: TrainConfig,
    seeds: list[int],
    max_workers: int = 1,
) -> tuple[RunDistribution, int]:
    """Train one model per seed on the identical dataset and aggregate test
    errors per fault group. Returns the distribution and the median seed
    (the run whose overall error is the middle order statistic; lower middle
    for even counts).

    Runs are independent and may execute in parallel; results merge in seed
    order so the output is deterministic for a given seed list.
    """
    if len(seeds) < 2:
        raise EmptyInputError("need at least two seeds")

    def one_run(seed: int) -> dict[str, float]:
        cfg = replace(base_config, seed=seed)
        result = train(hp, train_inputs, train_targets_std, cfg)
        return evaluate_model_errors(test_inputs, test_metas, result.params, scaler)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(one_run, seeds))
    else:
        results = [one_run(seed) for seed in seeds]

    values: dict[str, list[float]] = {g: [] for g in (*FAULT_GROUPS, "ALL")}
    for res in results:
        for group in values:
            values[group].append(res[group])

    order = sorted(range(len(seeds)), key=lambda i: (values["ALL"][i], seeds[i]))
    median_pos = order[(len(seeds) - 1) // 2]
    dist = RunDistribution(seeds=list(seeds), values=values,
                           median_seed=seeds[median_pos]).finalize()
    return dist, seeds[median_pos]
