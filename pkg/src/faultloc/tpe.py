"""Tree-structured Parzen estimator for hyperparameter search.

Startup trials sample uniformly; afterwards completed trials split at the
gamma-quantile of the objective into good/bad sets, one-dimensional Gaussian
kernel densities are fitted per parameter for each set (log space for
log-uniform parameters), and the candidate maximizing the good/bad density
ratio is suggested. Minimization throughout.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .errors import (
    AllTrialsFailedError,
    EmptySpaceError,
    InsufficientTrialsError,
)

N_STARTUP = 10
N_CANDIDATES = 24
GAMMA = 0.25
BANDWIDTH_FLOOR_FRAC = 0.01

KINDS = ("int_uniform", "int_step", "real_uniform", "real_log_uniform")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    low: float
    high: float
    step: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise EmptySpaceError(f"unknown parameter kind {self.kind!r}")
        if not self.low < self.high:
            raise EmptySpaceError(f"{self.name}: low must be < high")
        if self.kind == "int_step":
            if not self.step or self.step <= 0:
                raise EmptySpaceError(f"{self.name}: int_step needs a positive step")
            span = self.high - self.low
            if abs(span / self.step - round(span / self.step)) > 1e-9:
                raise EmptySpaceError(f"{self.name}: step must divide the range")
        if self.kind == "real_log_uniform" and self.low <= 0:
            raise EmptySpaceError(f"{self.name}: log-uniform needs low > 0")

    # transformed (internal) coordinates: log for log-uniform, identity else
    def to_internal(self, value: float) -> float:
        return math.log(value) if self.kind == "real_log_uniform" else float(value)

    def from_internal(self, u: float) -> float:
        value = math.exp(u) if self.kind == "real_log_uniform" else u
        return self.snap(value)

    def snap(self, value: float) -> float:
        value = min(max(value, self.low), self.high)
        if self.kind == "int_step":
            steps = round((value - self.low) / self.step)
            return float(self.low + steps * self.step)
        if self.kind == "int_uniform":
            return float(round(value))
        return float(value)

    def sample_uniform(self, rng: np.random.Generator) -> float:
        if self.kind == "int_step":
            n_steps = int(round((self.high - self.low) / self.step))
            return float(self.low + self.step * rng.integers(0, n_steps + 1))
        if self.kind == "int_uniform":
            return float(rng.integers(int(self.low), int(self.high) + 1))
        if self.kind == "real_log_uniform":
            return math.exp(rng.uniform(math.log(self.low), math.log(self.high)))
        return float(rng.uniform(self.low, self.high))

    def contains(self, value: float) -> bool:
        if not self.low - 1e-12 <= value <= self.high + 1e-12:
            return False
        if self.kind == "int_step":
            return abs((value - self.low) / self.step - round((value - self.low) / self.step)) < 1e-9
        if self.kind == "int_uniform":
            return abs(value - round(value)) < 1e-9
        return True


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[ParamSpec, ...]

    def __post_init__(self) -> None:
        if not self.params:
            raise EmptySpaceError("search space has no parameters")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise EmptySpaceError("duplicate parameter names")


def default_search_space() -> SearchSpace:
    """The stock network-capacity/regularization/optimizer space."""
    return SearchSpace(params=(
        ParamSpec("hidden_dim", "int_step", 64, 1024, 64),
        ParamSpec("num_blocks", "int_uniform", 2, 10),
        ParamSpec("dropout", "real_uniform", 0.1, 0.6),
        ParamSpec("lr", "real_log_uniform", 1e-4, 1e-2),
    ))


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    point: dict[str, float]
    objective: float
    status: str  # "complete" | "failed"


@dataclass
class TuneHistory:
    trials: list[TrialRecord] = field(default_factory=list)
    seed: int = 0
    gamma: float = GAMMA

    def complete(self) -> list[TrialRecord]:
        return [tr for tr in self.trials if tr.status == "complete"]

    def best(self) -> TrialRecord:
        done = self.complete()
        if not done:
            raise AllTrialsFailedError("no completed trials")
        return min(done, key=lambda tr: (tr.objective, tr.trial_id))


def split_good_bad(history: TuneHistory) -> tuple[list[TrialRecord], list[TrialRecord]]:
    """Completed trials below/above the gamma-quantile of the objective."""
    done = sorted(history.complete(), key=lambda tr: (tr.objective, tr.trial_id))
    n_good = max(1, math.ceil(history.gamma * len(done)))
    return done[:n_good], done[n_good:]


class _Parzen:
    """One-dimensional Gaussian mixture over observed internal coordinates.

    A wide prior component centered on the domain keeps unexplored regions at
    nonzero density (and occasionally sampled), which prevents the density
    ratio from locking onto an early cluster of observations.
    """

    def __init__(self, values: np.ndarray, spec: ParamSpec, bandwidth: float):
        self.lo = spec.to_internal(spec.low)
        self.hi = spec.to_internal(spec.high)
        self.centers = values
        self.bw = bandwidth
        self.prior_mu = 0.5 * (self.lo + self.hi)
        self.prior_sigma = self.hi - self.lo

    def logpdf(self, u: float) -> float:
        centers = np.append(self.centers, self.prior_mu)
        widths = np.append(np.full(len(self.centers), self.bw), self.prior_sigma)
        z = (u - centers) / widths
        log_terms = -0.5 * z * z - np.log(widths * math.sqrt(2 * math.pi))
        m = float(np.max(log_terms))
        return m + math.log(float(np.sum(np.exp(log_terms - m)))) - math.log(len(centers))

    def sample(self, rng: np.random.Generator) -> float:
        idx = int(rng.integers(0, len(self.centers) + 1))
        if idx == len(self.centers):
            return float(self.prior_mu + self.prior_sigma * rng.normal())
        return float(self.centers[idx] + self.bw * rng.normal())


def _rng_for(history_seed: int, trial_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((history_seed, trial_id))))


def suggest(history: TuneHistory, space: SearchSpace, trial_id: int | None = None) -> dict[str, float]:
    """Next point to evaluate. Deterministic given (history, space)."""
    if trial_id is None:
        trial_id = len(history.trials)
    rng = _rng_for(history.seed, trial_id)
    done = history.complete()
    if len(done) < N_STARTUP:
        return {p.name: p.sample_uniform(rng) for p in space.params}

    good, bad = split_good_bad(history)
    if not bad:
        return {p.name: p.sample_uniform(rng) for p in space.params}

    point: dict[str, float] = {}
    for spec in space.params:
        good_vals = np.array([spec.to_internal(tr.point[spec.name]) for tr in good])
        bad_vals = np.array([spec.to_internal(tr.point[spec.name]) for tr in bad])
        # Shared Scott-rule bandwidth from all observations, floored at 1% of
        # the range; per-side bandwidths would let a collapsed good set
        # dominate the ratio indefinitely.
        all_vals = np.concatenate([good_vals, bad_vals])
        span = spec.to_internal(spec.high) - spec.to_internal(spec.low)
        bw = max(float(all_vals.std()) * len(all_vals) ** -0.2,
                 BANDWIDTH_FLOOR_FRAC * span)
        l_est = _Parzen(good_vals, spec, bw)
        g_est = _Parzen(bad_vals, spec, bw)
        best_score = -math.inf
        best_value = spec.snap(spec.from_internal(float(good_vals[0])))
        for _ in range(N_CANDIDATES):
            u = l_est.sample(rng)
            u = min(max(u, spec.to_internal(spec.low)), spec.to_internal(spec.high))
            value = spec.from_internal(u)
            u_snapped = spec.to_internal(value)
            score = l_est.logpdf(u_snapped) - g_est.logpdf(u_snapped)
            if score > best_score:
                best_score = score
                best_value = value
        point[spec.name] = best_value
    return point


def optimize(
    objective,
    space: SearchSpace,
    n_trials: int,
    seed: int = 0,
    gamma: float = GAMMA,
    batch_size: int = 1,
    max_workers: int | None = None,
) -> tuple[TrialRecord, TuneHistory]:
    """Run suggest/evaluate/record cycles; failed evaluations are recorded and
    excluded from density fits.

    ``batch_size`` > 1 proposes that many points from a history snapshot and
    evaluates them concurrently; results merge in trial-id order, so the
    recorded history is deterministic per (seed, batch_size).
    """
    if n_trials < 1:
        raise EmptySpaceError("n_trials must be >= 1")
    history = TuneHistory(seed=seed, gamma=gamma)

    def evaluate(trial_id: int, point: dict[str, float]) -> TrialRecord:
        try:
            value = float(objective(point))
            if not math.isfinite(value):
                raise ValueError(f"objective returned {value}")
            return TrialRecord(trial_id, point, value, "complete")
        except Exception:
            return TrialRecord(trial_id, point, math.nan, "failed")

    next_id = 0
    while next_id < n_trials:
        k = min(batch_size, n_trials - next_id)
        points = [suggest(history, space, trial_id=next_id + j) for j in range(k)]
        if k == 1:
            results = [evaluate(next_id, points[0])]
        else:
            with ThreadPoolExecutor(max_workers=max_workers or k) as pool:
                results = list(pool.map(evaluate, range(next_id, next_id + k), points))
        history.trials.extend(results)
        next_id += k

    best = history.best()
    return best, history


def param_importance(history: TuneHistory) -> dict[str, float]:
    """Nonnegative importance fractions (summing to one) from squared rank
    correlation of each parameter with the objective."""
    done = history.complete()
    if len(done) < 20:
        raise InsufficientTrialsError(f"need >= 20 complete trials, got {len(done)}")
    names = sorted(done[0].point)
    objectives = [tr.objective for tr in done]
    raw = {}
    for name in names:
        values = [tr.point[name] for tr in done]
        if len(set(values)) < 2 or len(set(objectives)) < 2:
            raw[name] = 0.0
            continue
        rho = spearmanr(values, objectives).statistic
        raw[name] = 0.0 if math.isnan(rho) else rho * rho
    total = sum(raw.values())
    if total == 0.0:
        return {name: 1.0 / len(names) for name in names}
    return {name: raw[name] / total for name in names}


# ---------------------------------------------------------------------------
# history persistence (JSON lines, one record per line)
# ---------------------------------------------------------------------------

def write_history(history: TuneHistory, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        for tr in history.trials:
            fh.write(json.dumps({
                "trial_id": tr.trial_id,
                "point": tr.point,
                "objective": None if math.isnan(tr.objective) else tr.objective,
                "status": tr.status,
            }, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_history(path: str, seed: int = 0, gamma: float = GAMMA) -> TuneHistory:
    history = TuneHistory(seed=seed, gamma=gamma)
    with open(path) as fh:
        for line in fh:
            doc = json.loads(line)
            history.trials.append(TrialRecord(
                trial_id=int(doc["trial_id"]),
                point={k: float(v) for k, v in doc["point"].items()},
                objective=math.nan if doc["objective"] is None else float(doc["objective"]),
                status=doc["status"],
            ))
    return history
