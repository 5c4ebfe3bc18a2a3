"""Feature extraction, KSG mutual information, selection, and preprocessing.

The feature catalog covers four groups: phase magnitudes/angles (plus phase
deltas against pre-fault), symmetrical components, loop/fault quantities, and
the baseline estimate with line impedance descriptors. Angles enter as
cos/sin pairs; delta features are magnitudes of complex differences.

Records are canonicalized before extraction: phase labels are cyclically
rotated so the fault loop is A-referenced (the same rotation that defines the
loop algebra), and all phasors are de-rotated by the pre-fault
positive-sequence voltage angle. Rotationally equivalent faults (e.g. a
B-to-ground fault and its A-to-ground counterpart) therefore produce
identical feature vectors, which lets a model trained on A-referenced fault
types serve the full ten-type catalog.
"""

from __future__ import annotations

import cmath
import csv
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .errors import (
    DegenerateFeatureError,
    InsufficientSamplesError,
    InvalidEstimateError,
    NotFittedError,
    ZeroVarianceError,
)
from .locators import DistanceEstimate
from .phasor import (
    CANONICAL_LOOP,
    LOOP_ORDER,
    FaultLoop,
    LineParams,
    ThreePhaseSet,
    loop_quantities,
    to_sequence,
)
from .simulator import MeasurementRecord

CATEGORY_ORDER = tuple(loop.value for loop in LOOP_ORDER)

FEATURE_NAMES: tuple[str, ...] = (
    # phase magnitudes and angle components (during fault)
    "ia_mag", "ib_mag", "ic_mag", "va_mag", "vb_mag", "vc_mag",
    "ia_cos", "ib_cos", "ic_cos", "va_cos", "vb_cos", "vc_cos",
    "ia_sin", "ib_sin", "ic_sin", "va_sin", "vb_sin", "vc_sin",
    # phase change against pre-fault
    "delta_ia", "delta_ib", "delta_ic", "delta_va", "delta_vb", "delta_vc",
    # symmetrical components
    "i0_mag", "i1_mag", "i2_mag", "v0_mag", "v1_mag", "v2_mag",
    "delta_i0", "delta_i1", "delta_i2", "delta_v0", "delta_v1", "delta_v2",
    "i1_pre_mag", "v1_pre_mag",
    "i0_cos", "i1_cos", "i2_cos", "v0_cos", "v1_cos", "v2_cos",
    "i0_sin", "i1_sin", "i2_sin", "v0_sin", "v1_sin", "v2_sin",
    # loop and fault quantities
    "i_fault_mag", "v_loop_mag", "i_loop_mag", "i_loop_pre_mag", "v_loop_pre_mag",
    "v_loop_pre_sin", "v_loop_pre_cos", "i_loop_pre_sin", "i_loop_pre_cos",
    "i_loop_cos", "v_loop_cos", "i_loop_sin", "v_loop_sin",
    # baseline estimate and line impedance
    "d_est_km", "line_length_km", "line_z1_mag", "line_z1_re", "line_z1_im",
)

FEATURE_COUNT = len(FEATURE_NAMES)

ONE_HOT_NAMES = tuple(f"fault_{cat}" for cat in CATEGORY_ORDER)


@dataclass(frozen=True)
class FeatureVector:
    values: dict[str, float]
    fault_type: FaultLoop
    target_correction_km: float
    scenario_id: str


def one_hot(fault_type: FaultLoop) -> list[int]:
    """Length-10 indicator in the fixed category order."""
    return [1 if cat == fault_type.value else 0 for cat in CATEGORY_ORDER]


def canonical_one_hot(fault_type: FaultLoop | str) -> list[int]:
    """Indicator of the A-referenced loop the fault type canonicalizes to.

    Used for model inputs so that rotationally equivalent types share an
    encoding; only four categories are ever active.
    """
    if isinstance(fault_type, str):
        fault_type = FaultLoop(fault_type)
    _, canonical = CANONICAL_LOOP[fault_type]
    return one_hot(canonical)


# Magnitudes below this (volt or ampere) are treated as zero phasors; their
# angle is solver noise, so the cos/sin encoding pins to (1, 0).
_ANGLE_FLOOR = 1e-6


def _mag_cossin(z: complex) -> tuple[float, float, float]:
    mag = abs(z)
    if mag < _ANGLE_FLOOR:
        return mag, 1.0, 0.0
    ang = cmath.phase(z)
    return mag, math.cos(ang), math.sin(ang)


def _spin(tri: ThreePhaseSet, factor: complex) -> ThreePhaseSet:
    return ThreePhaseSet(tri.a * factor, tri.b * factor, tri.c * factor, tri.unit)


def extract_features(
    rec: MeasurementRecord,
    loop: FaultLoop,
    line: LineParams,
    d_est: DistanceEstimate,
) -> FeatureVector:
    """Full feature catalog for one record. Requires a valid baseline estimate."""
    if not d_est.valid:
        raise InvalidEstimateError(
            f"cannot extract features from invalid estimate ({d_est.diagnostic})"
        )
    rotations, loop = CANONICAL_LOOP[loop]
    v, i = rec.v_fault.rotated(rotations), rec.i_fault.rotated(rotations)
    vp, ip = rec.v_pre.rotated(rotations), rec.i_pre.rotated(rotations)
    v1_pre = to_sequence(vp).pos
    if abs(v1_pre) > 0:
        ref = v1_pre.conjugate() / abs(v1_pre)
        v, i, vp, ip = (_spin(t, ref) for t in (v, i, vp, ip))
    out: dict[str, float] = {}

    for name, ph in (("ia", i.a), ("ib", i.b), ("ic", i.c),
                     ("va", v.a), ("vb", v.b), ("vc", v.c)):
        mag, c, s = _mag_cossin(ph)
        out[f"{name}_mag"] = mag
        out[f"{name}_cos"] = c
        out[f"{name}_sin"] = s
    out["delta_ia"] = abs(i.a - ip.a)
    out["delta_ib"] = abs(i.b - ip.b)
    out["delta_ic"] = abs(i.c - ip.c)
    out["delta_va"] = abs(v.a - vp.a)
    out["delta_vb"] = abs(v.b - vp.b)
    out["delta_vc"] = abs(v.c - vp.c)

    iseq = to_sequence(i)
    vseq = to_sequence(v)
    iseq_pre = to_sequence(ip)
    vseq_pre = to_sequence(vp)
    for name, ph in (("i0", iseq.zero), ("i1", iseq.pos), ("i2", iseq.neg),
                     ("v0", vseq.zero), ("v1", vseq.pos), ("v2", vseq.neg)):
        mag, c, s = _mag_cossin(ph)
        out[f"{name}_mag"] = mag
        out[f"{name}_cos"] = c
        out[f"{name}_sin"] = s
    out["delta_i0"] = abs(iseq.zero - iseq_pre.zero)
    out["delta_i1"] = abs(iseq.pos - iseq_pre.pos)
    out["delta_i2"] = abs(iseq.neg - iseq_pre.neg)
    out["delta_v0"] = abs(vseq.zero - vseq_pre.zero)
    out["delta_v1"] = abs(vseq.pos - vseq_pre.pos)
    out["delta_v2"] = abs(vseq.neg - vseq_pre.neg)
    out["i1_pre_mag"] = abs(iseq_pre.pos)
    out["v1_pre_mag"] = abs(vseq_pre.pos)

    lq = loop_quantities(vp, ip, v, i, loop, line)
    lq_pre = loop_quantities(vp, ip, vp, ip, loop, line)
    out["i_fault_mag"] = abs(lq.i_f)
    m, c, s = _mag_cossin(lq.v_loop)
    out["v_loop_mag"], out["v_loop_cos"], out["v_loop_sin"] = m, c, s
    m, c, s = _mag_cossin(lq.i_loop)
    out["i_loop_mag"], out["i_loop_cos"], out["i_loop_sin"] = m, c, s
    m, c, s = _mag_cossin(lq_pre.i_loop)
    out["i_loop_pre_mag"], out["i_loop_pre_cos"], out["i_loop_pre_sin"] = m, c, s
    m, c, s = _mag_cossin(lq_pre.v_loop)
    out["v_loop_pre_mag"], out["v_loop_pre_cos"], out["v_loop_pre_sin"] = m, c, s

    out["d_est_km"] = d_est.d_est_km
    out["line_length_km"] = line.length_km
    out["line_z1_mag"] = abs(line.z1)
    out["line_z1_re"] = line.z1.real
    out["line_z1_im"] = line.z1.imag

    ordered = {name: out[name] for name in FEATURE_NAMES}
    for name, val in ordered.items():
        if not math.isfinite(val):
            raise InvalidEstimateError(f"non-finite feature {name}")
    target = rec.scenario.distance_km - d_est.d_est_km
    return FeatureVector(ordered, rec.scenario.fault_type, target, rec.scenario.scenario_id)


# ---------------------------------------------------------------------------
# KSG mutual information (k-nearest-neighbor estimator, variant 1)
# ---------------------------------------------------------------------------

def _pair_jitter(x: np.ndarray, y: np.ndarray, tag: bytes, seed: int) -> np.ndarray:
    """Deterministic tie-breaking noise in [-1, 1) derived from each (x, y)
    pair's value bits. Permutation-invariant and identical for identical
    columns, so exact ties stay exact ties."""
    out = np.empty(len(x))
    seed_b = struct.pack("<q", seed)
    for idx in range(len(x)):
        h = hashlib.blake2b(
            seed_b + tag + struct.pack("<dd", x[idx], y[idx]), digest_size=8
        ).digest()
        out[idx] = int.from_bytes(h, "little") / 2**63 - 1.0
    return out


def mutual_information(x, y, k: int = 3, seed: int = 0) -> float:
    """Mutual information in nats between two scalar samples, estimated with
    the k-nearest-neighbor method (counting neighbors within the joint
    k-th-neighbor radius in each marginal). Clamped at zero from below.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if len(y) != n or n < 4 * k or k < 1:
        raise InsufficientSamplesError(f"need len(x) == len(y) >= 4k, got {n} and {len(y)} with k={k}")
    sx = float(np.std(x))
    sy = float(np.std(y))
    if sx == 0.0 or sy == 0.0:
        return 0.0
    # Standardize, quantize away last-bit noise so affinely identical columns
    # coincide exactly, then add pair-keyed jitter to break distance ties.
    xs = np.round((x - np.mean(x)) / sx, 12)
    ys = np.round((y - np.mean(y)) / sy, 12)
    xj = xs + 1e-10 * _pair_jitter(xs, ys, b"x", seed)
    yj = ys + 1e-10 * _pair_jitter(xs, ys, b"y", seed)

    joint = np.column_stack([xj, yj])
    tree = cKDTree(joint)
    eps = tree.query(joint, k=k + 1, p=np.inf)[0][:, k]

    xs_sorted = np.sort(xj)
    ys_sorted = np.sort(yj)
    # strict |x_j - x_i| < eps_i, excluding the point itself
    nx = (np.searchsorted(xs_sorted, xj + eps, side="left")
          - np.searchsorted(xs_sorted, xj - eps, side="right") - 1)
    ny = (np.searchsorted(ys_sorted, yj + eps, side="left")
          - np.searchsorted(ys_sorted, yj - eps, side="right") - 1)

    mi = (float(digamma(k)) + float(digamma(n))
          - math.fsum(digamma(nx + 1) + digamma(ny + 1)) / n)
    return max(mi, 0.0)


# ---------------------------------------------------------------------------
# selection: correlation cliques + MI ranking
# ---------------------------------------------------------------------------

@dataclass
class SelectionReport:
    mi_scores: dict[str, float]
    correlation_cliques: list[list[str]]
    retained: list[str]
    dropped_low_mi: list[str]
    dropped_degenerate: list[str]
    thresholds: dict[str, float]

    def to_json(self) -> str:
        return json.dumps({
            "mi_scores": self.mi_scores,
            "correlation_cliques": self.correlation_cliques,
            "retained": self.retained,
            "dropped_low_mi": self.dropped_low_mi,
            "dropped_degenerate": self.dropped_degenerate,
            "thresholds": self.thresholds,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SelectionReport":
        doc = json.loads(text)
        return cls(
            mi_scores=doc["mi_scores"],
            correlation_cliques=doc["correlation_cliques"],
            retained=doc["retained"],
            dropped_low_mi=doc["dropped_low_mi"],
            dropped_degenerate=doc.get("dropped_degenerate", []),
            thresholds=doc["thresholds"],
        )


def select_features(
    matrix: np.ndarray,
    names: list[str],
    target: np.ndarray,
    corr_threshold: float = 0.95,
    mi_threshold: float = 0.1,
    k: int = 3,
) -> SelectionReport:
    """Clique-based redundancy pruning followed by an MI relevance cutoff.

    Cliques are connected components of the |pearson| > threshold graph
    (transitive closure). Within each clique the member with the highest MI
    against the target survives, ties broken by catalog order; survivors with
    MI below the threshold are discarded. Zero-variance columns are reported
    and dropped up front. Fault-type indicator columns are not passed here;
    they bypass selection entirely.
    """
    matrix = np.asarray(matrix, dtype=float)
    n_rows, n_cols = matrix.shape
    if n_cols != len(names):
        raise ValueError("names/matrix mismatch")

    stds = matrix.std(axis=0)
    degenerate = [names[j] for j in range(n_cols) if stds[j] == 0.0]
    live = [j for j in range(n_cols) if stds[j] > 0.0]

    mi_scores = {
        names[j]: mutual_information(matrix[:, j], target, k=k) for j in live
    }

    # Pearson graph over live columns.
    parent = {j: j for j in live}

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    if live:
        sub = matrix[:, live]
        corr = np.corrcoef(sub, rowvar=False)
        if corr.ndim == 0:
            corr = np.array([[1.0]])
        for ai in range(len(live)):
            for bi in range(ai + 1, len(live)):
                if abs(corr[ai, bi]) > corr_threshold:
                    union(live[ai], live[bi])

    components: dict[int, list[int]] = {}
    for j in live:
        components.setdefault(find(j), []).append(j)

    cliques = []
    retained_idx = []
    for root in sorted(components):
        members = sorted(components[root])
        best = max(members, key=lambda j: (mi_scores[names[j]], -j))
        retained_idx.append(best)
        if len(members) > 1:
            cliques.append([names[j] for j in members])

    retained_idx.sort()
    retained, dropped_low = [], []
    for j in retained_idx:
        if mi_scores[names[j]] < mi_threshold:
            dropped_low.append(names[j])
        else:
            retained.append(names[j])

    return SelectionReport(
        mi_scores=mi_scores,
        correlation_cliques=cliques,
        retained=retained,
        dropped_low_mi=dropped_low,
        dropped_degenerate=degenerate,
        thresholds={"corr": corr_threshold, "mi": mi_threshold},
    )


# ---------------------------------------------------------------------------
# z-score scaler (population statistics, train split only)
# ---------------------------------------------------------------------------

@dataclass
class Scaler:
    feature_names: list[str] = field(default_factory=list)
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    target_mu: float = 0.0
    target_sigma: float = 1.0
    fitted: bool = False

    def fit(self, matrix: np.ndarray, target: np.ndarray, names: list[str]) -> "Scaler":
        matrix = np.asarray(matrix, dtype=float)
        self.feature_names = list(names)
        self.mu = matrix.mean(axis=0)
        self.sigma = matrix.std(axis=0)
        bad = [names[j] for j in range(len(names)) if self.sigma[j] == 0.0]
        if bad:
            raise ZeroVarianceError(f"constant feature(s) reached the scaler: {bad}")
        self.target_mu = float(np.mean(target))
        self.target_sigma = float(np.std(target))
        if self.target_sigma == 0.0:
            self.target_sigma = 1.0
        self.fitted = True
        return self

    def _check(self) -> None:
        if not self.fitted:
            raise NotFittedError("scaler used before fit")

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        self._check()
        return (np.asarray(matrix, dtype=float) - self.mu) / self.sigma

    def transform_target(self, target: np.ndarray) -> np.ndarray:
        self._check()
        return (np.asarray(target, dtype=float) - self.target_mu) / self.target_sigma

    def inverse_target(self, standardized: np.ndarray | float):
        self._check()
        return np.asarray(standardized, dtype=float) * self.target_sigma + self.target_mu

    def to_dict(self) -> dict:
        self._check()
        return {
            "feature_names": self.feature_names,
            "mu": [float(v) for v in self.mu],
            "sigma": [float(v) for v in self.sigma],
            "target_mu": self.target_mu,
            "target_sigma": self.target_sigma,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scaler":
        sc = cls(
            feature_names=list(doc["feature_names"]),
            mu=np.asarray(doc["mu"], dtype=float),
            sigma=np.asarray(doc["sigma"], dtype=float),
            target_mu=float(doc["target_mu"]),
            target_sigma=float(doc["target_sigma"]),
        )
        sc.fitted = True
        return sc


# ---------------------------------------------------------------------------
# feature table assembly and CSV interchange
# ---------------------------------------------------------------------------

@dataclass
class FeatureTable:
    """Raw (unstandardized) feature rows with metadata, one per scenario."""

    names: list[str]
    matrix: np.ndarray          # (n, len(names))
    one_hots: np.ndarray        # (n, 10)
    targets: np.ndarray         # correction in km
    scenario_ids: list[str]
    splits: list[str]
    fault_types: list[str]

    def columns_for(self, selected: list[str]) -> np.ndarray:
        idx = [self.names.index(n) for n in selected]
        return self.matrix[:, idx]

    def model_inputs(self, selected: list[str], scaler: Scaler) -> np.ndarray:
        """Standardized selected features concatenated with the canonical-loop
        one-hot encoding (rotationally equivalent types share an encoding)."""
        hots = np.array([canonical_one_hot(ft) for ft in self.fault_types], dtype=float)
        return np.hstack([scaler.transform(self.columns_for(selected)), hots])


def build_feature_table(vectors: list[FeatureVector], splits: list[str]) -> FeatureTable:
    names = list(FEATURE_NAMES)
    matrix = np.array([[fv.values[n] for n in names] for fv in vectors], dtype=float)
    hots = np.array([one_hot(fv.fault_type) for fv in vectors], dtype=float)
    targets = np.array([fv.target_correction_km for fv in vectors], dtype=float)
    return FeatureTable(
        names=names,
        matrix=matrix,
        one_hots=hots,
        targets=targets,
        scenario_ids=[fv.scenario_id for fv in vectors],
        splits=list(splits),
        fault_types=[fv.fault_type.value for fv in vectors],
    )


def write_feature_csv(table: FeatureTable, retained: list[str], path: str) -> None:
    """Feature matrix CSV: retained features, one-hot columns, target, ids."""
    header = list(retained) + list(ONE_HOT_NAMES) + [
        "target_correction_km", "scenario_id", "split",
    ]
    cols = table.columns_for(retained)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(table.targets)):
            row = [repr(float(v)) for v in cols[i]]
            row += [str(int(v)) for v in table.one_hots[i]]
            row.append(repr(float(table.targets[i])))
            row.append(table.scenario_ids[i])
            row.append(table.splits[i])
            writer.writerow(row)
    os.replace(tmp, path)


def read_feature_csv(path: str) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray, list[str], list[str]]:
    """Returns (retained names, features, one_hots, targets, scenario_ids, splits)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    tail = ["target_correction_km", "scenario_id", "split"]
    if header[-3:] != tail:
        raise NotFittedError(f"not a feature CSV: {path}")
    hot_start = len(header) - 3 - len(ONE_HOT_NAMES)
    names = header[:hot_start]
    feats = np.array([[float(v) for v in row[:hot_start]] for row in rows], dtype=float)
    hots = np.array(
        [[float(v) for v in row[hot_start:hot_start + len(ONE_HOT_NAMES)]] for row in rows],
        dtype=float,
    )
    targets = np.array([float(row[-3]) for row in rows], dtype=float)
    ids = [row[-2] for row in rows]
    splits = [row[-1] for row in rows]
    return names, feats, hots, targets, ids, splits
