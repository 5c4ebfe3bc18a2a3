"""Analytic short-circuit solver and scenario-grid dataset generator.

One collector feeder is modeled per line: a grid equivalent (voltage source
behind sequence impedances) at the relay bus, a homogeneous line, and an
optional converter-interfaced remote infeed at the far end modeled as a
controlled current source. Two independent solution paths are provided:

* :func:`solve_fault` reduces each sequence network to its Thevenin
  equivalent at the fault point and applies the series/parallel connection
  for the fault type.
* :func:`nodal_oracle` assembles the full branch/node equations of the
  three-node circuit in phase coordinates and solves them as one linear
  system, with the fault represented by explicit branch constraints.

Both return relay-point phasors in SI units (volt, ampere).
"""

from __future__ import annotations

import cmath
import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigError,
    EmptyGridError,
    InvalidScenarioError,
    SingularNetworkError,
)
from .phasor import (
    ALPHA,
    ALPHA2,
    CANONICAL_LOOP,
    GROUND_LOOPS,
    LOOP_ORDER,
    FaultLoop,
    LineParams,
    ThreePhaseSet,
    Unit,
    from_sequence,
)

# Fortescue matrices, sequence order (zero, pos, neg).
_A = np.array([
    [1, 1, 1],
    [1, ALPHA2, ALPHA],
    [1, ALPHA, ALPHA2],
], dtype=complex)
_A_INV = np.linalg.inv(_A)

# Voltage dip (relative, positive sequence at the fault point) at which the
# converter fleet is assumed fully in fault-ride-through current limiting;
# shallower dips blend proportionally between operating and limited current.
_RIDE_THROUGH_DIP = 0.3

# Zero-sequence grounding path at the far end (interface transformer winding),
# per unit on the system base. Active only when the infeed is enabled and its
# interface transformer does not block zero sequence.
_GROUNDING_Z_PU = 4j

_PREFAULT_TOL = 1e-12
_PREFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class RemoteInfeed:
    """Converter-interfaced generation at the far line end.

    During a fault the fleet injects positive-sequence current limited to
    ``max_current_pu`` at power factor ``pf`` (referenced to the pre-fault
    terminal voltage angle). ``neg_seq_fraction`` scales the negative-sequence
    injection for unbalanced faults. ``zero_seq_blocked`` selects the interface
    transformer behavior: blocked (delta winding, no zero-sequence path) or a
    grounded winding providing a passive zero-sequence return at the far end.
    """

    enabled: bool = False
    max_current_pu: float = 1.2
    pf: float = 1.0
    neg_seq_fraction: float = 0.05
    zero_seq_blocked: bool = True

    def __post_init__(self) -> None:
        if self.max_current_pu < 0:
            raise ConfigError("max_current_pu must be >= 0")
        if not 0.0 <= self.pf <= 1.0:
            raise ConfigError("pf must lie in [0, 1]")
        if not 0.0 <= self.neg_seq_fraction <= 1.0:
            raise ConfigError("neg_seq_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class CollectorLine:
    """One feeder: line parameters plus the grid equivalent behind its relay."""

    line_id: str
    params: LineParams
    source_z1: complex
    source_z0: complex


@dataclass(frozen=True)
class NetworkConfig:
    lines: tuple[CollectorLine, ...]
    nominal_kv: float
    base_mva: float
    remote_infeed: RemoteInfeed = field(default_factory=RemoteInfeed)

    def __post_init__(self) -> None:
        if not self.lines:
            raise ConfigError("network needs at least one line")
        if self.nominal_kv <= 0:
            raise ConfigError("nominal_kv must be positive")
        if self.base_mva <= 0:
            raise ConfigError("base_mva must be positive")
        ids = [ln.line_id for ln in self.lines]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate line_id in network")

    @property
    def phase_voltage_v(self) -> float:
        """Phase-to-ground source EMF magnitude in volts."""
        return self.nominal_kv * 1e3 / math.sqrt(3.0)

    @property
    def base_current_a(self) -> float:
        return self.base_mva * 1e6 / (math.sqrt(3.0) * self.nominal_kv * 1e3)

    @property
    def base_impedance_ohm(self) -> float:
        return (self.nominal_kv * 1e3) ** 2 / (self.base_mva * 1e6)

    @property
    def grounding_z_ohm(self) -> complex | None:
        """Far-end zero-sequence grounding impedance, None when no path exists."""
        if self.remote_infeed.enabled and not self.remote_infeed.zero_seq_blocked:
            return _GROUNDING_Z_PU * self.base_impedance_ohm
        return None

    def line(self, line_id: str) -> CollectorLine:
        for ln in self.lines:
            if ln.line_id == line_id:
                return ln
        raise InvalidScenarioError(f"unknown line_id {line_id!r}")


@dataclass(frozen=True)
class FaultScenario:
    line_id: str
    fault_type: FaultLoop
    distance_km: float
    r_fault_ohm: float
    inception_angle_deg: float
    generation_pu: float
    scenario_id: str = ""

    def __post_init__(self) -> None:
        if self.distance_km < 0:
            raise InvalidScenarioError("distance_km must be >= 0")
        if self.r_fault_ohm < 0:
            raise InvalidScenarioError("r_fault_ohm must be >= 0")
        if not 0.0 <= self.generation_pu <= 1.0:
            raise InvalidScenarioError("generation_pu must lie in [0, 1]")


@dataclass(frozen=True)
class MeasurementRecord:
    """Relay-point phasor snapshot before and during the fault."""

    v_pre: ThreePhaseSet
    i_pre: ThreePhaseSet
    v_fault: ThreePhaseSet
    i_fault: ThreePhaseSet
    scenario: FaultScenario
    split: str = ""


@dataclass(frozen=True)
class ScenarioGrid:
    """Cartesian scenario grid; locations are fractions of line length."""

    fault_types: tuple[FaultLoop, ...]
    resistances_ohm: tuple[float, ...]
    location_fractions: tuple[float, ...]
    angles_deg: tuple[float, ...]
    generation_levels_pu: tuple[float, ...]
    line_ids: tuple[str, ...]
    split_tag: str = "train"

    def size(self) -> int:
        return (
            len(self.fault_types) * len(self.resistances_ohm) * len(self.location_fractions)
            * len(self.angles_deg) * len(self.generation_levels_pu) * len(self.line_ids)
        )


# ---------------------------------------------------------------------------
# infeed behavioral model (shared scenario semantics for both solution paths)
# ---------------------------------------------------------------------------

def _prefault_injection(net: NetworkConfig, line: CollectorLine, gen_pu: float) -> complex:
    """Pre-fault phase-a current injected at the far end (unity power factor).

    The injection angle tracks the terminal voltage, which itself depends on
    the injection; solved by fixed-point iteration.
    """
    if not net.remote_infeed.enabled or gen_pu <= 0:
        return 0j
    e = net.phase_voltage_v
    mag = gen_pu * net.base_current_a
    z_path = line.source_z1 + line.params.z1
    v_t = complex(e, 0.0)
    for _ in range(_PREFAULT_MAX_ITER):
        if abs(v_t) == 0:
            raise SingularNetworkError("terminal voltage collapsed in pre-fault solution")
        inj = mag * v_t / abs(v_t)
        v_next = e + z_path * inj
        if abs(v_next - v_t) <= _PREFAULT_TOL * max(abs(v_t), 1.0):
            v_t = v_next
            break
        v_t = v_next
    return mag * v_t / abs(v_t)


def _canonical_fault_currents(
    kind: FaultLoop,
    z_eq: tuple[complex, complex, complex],
    v_oc: tuple[complex, complex, complex],
    rf: float,
) -> tuple[complex, complex, complex]:
    """Sequence currents (zero, pos, neg) into an A-referenced fault at the
    fault point, given per-sequence Thevenin equivalents."""
    z0, z1, z2 = z_eq
    v0, v1, v2 = v_oc
    if kind is FaultLoop.AG:
        den = z0 + z1 + z2 + 3 * rf
        if abs(den) == 0:
            raise SingularNetworkError("zero driving impedance for ground fault")
        i = (v0 + v1 + v2) / den
        return i, i, i
    if kind is FaultLoop.AB:
        den = z1 + z2 + rf
        if abs(den) == 0:
            raise SingularNetworkError("zero driving impedance for phase fault")
        i1 = (v1 - ALPHA * v2) / den
        return 0j, i1, -ALPHA2 * i1
    if kind is FaultLoop.ABG:
        # Unknowns x = [I0, I1, I2]; rows: healthy phase c carries no fault
        # current, faulted phase voltages are equal, and their common value
        # equals rf times the ground current 3*I0.
        m = np.array([
            [1, ALPHA, ALPHA2],
            [0, ALPHA2 * z1, -z2],
            [z0 + 3 * rf, z1, z2],
        ], dtype=complex)
        rhs = np.array([0j, ALPHA2 * v1 - v2, v0 + v1 + v2], dtype=complex)
        try:
            i0, i1, i2 = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularNetworkError("singular double-line-ground connection") from exc
        return complex(i0), complex(i1), complex(i2)
    if kind is FaultLoop.ABC:
        if abs(z1 + rf) == 0 or abs(z2 + rf) == 0:
            raise SingularNetworkError("zero driving impedance for three-phase fault")
        return 0j, v1 / (z1 + rf), v2 / (z2 + rf)
    raise InvalidScenarioError(f"not an A-referenced fault kind: {kind}")


def _fault_injections(
    net: NetworkConfig,
    line: CollectorLine,
    sc: FaultScenario,
    i_pre_inj: complex,
) -> tuple[complex, complex]:
    """During-fault (pos, neg) sequence injections at the far end.

    The positive-sequence injection blends smoothly between the pre-fault
    operating current and the ride-through current limit, keyed on the
    positive-sequence voltage dip the fault alone (no infeed) would cause at
    the fault point. This keeps vanishing faults indistinguishable from
    normal operation. Negative-sequence injection exists only for unbalanced
    faults and rotates with the faulted phases (the converter responds to the
    unbalance the fault creates), so rotated fault types stay exactly
    equivalent to their A-referenced counterparts.
    """
    inf = net.remote_infeed
    if not inf.enabled:
        return 0j, 0j

    x = sc.distance_km / line.params.length_km
    z_eq = (
        line.source_z0 + x * line.params.z0,
        line.source_z1 + x * line.params.z1,
        line.source_z1 + x * line.params.z1,
    )
    e = complex(net.phase_voltage_v, 0.0)
    rotations, kind = CANONICAL_LOOP[sc.fault_type]
    _, i1_probe, _ = _canonical_fault_currents(kind, z_eq, (0j, e, 0j), sc.r_fault_ohm)
    v1_fault_point = e - z_eq[1] * i1_probe
    dip = max(0.0, 1.0 - abs(v1_fault_point) / abs(e))
    w = min(1.0, dip / _RIDE_THROUGH_DIP)

    # Pre-fault terminal voltage angle is the converter PLL reference.
    theta_pre = cmath.phase(e + (line.source_z1 + line.params.z1) * i_pre_inj)
    i_cap = inf.max_current_pu * net.base_current_a * cmath.exp(
        1j * (theta_pre - math.acos(inf.pf))
    )
    i1 = (1.0 - w) * i_pre_inj + w * i_cap
    i2 = 0j
    if sc.fault_type is not FaultLoop.ABC:
        i2 = inf.neg_seq_fraction * w * i_cap * ALPHA ** (rotations % 3)
    return i1, i2


# ---------------------------------------------------------------------------
# production path: Thevenin reduction + sequence connection
# ---------------------------------------------------------------------------

def _validate_scenario(net: NetworkConfig, sc: FaultScenario) -> CollectorLine:
    line = net.line(sc.line_id)
    if sc.distance_km > line.params.length_km * (1 + 1e-12):
        raise InvalidScenarioError(
            f"distance {sc.distance_km} km beyond line {sc.line_id} ({line.params.length_km} km)"
        )
    return line


def solve_fault(net: NetworkConfig, sc: FaultScenario) -> MeasurementRecord:
    """Relay-point phasors for a scenario via sequence-network reduction."""
    line = _validate_scenario(net, sc)
    e = complex(net.phase_voltage_v, 0.0)
    i_pre_inj = _prefault_injection(net, line, sc.generation_pu)

    # Pre-fault: injection flows through the whole line into the source.
    v1_pre = e + line.source_z1 * i_pre_inj
    v_pre = from_sequence_triple(0j, v1_pre, 0j, Unit.VOLT)
    i_pre = from_sequence_triple(0j, -i_pre_inj, 0j, Unit.AMPERE)

    i1_inj, i2_inj = _fault_injections(net, line, sc, i_pre_inj)

    rotations, kind = CANONICAL_LOOP[sc.fault_type]
    # Under cyclic relabeling the sequence sources transform per component:
    # positive by alpha^(2r), negative by alpha^r, zero unchanged.
    w_pos = ALPHA ** (2 * rotations % 3)
    w_neg = ALPHA ** (rotations % 3)

    x = sc.distance_km / line.params.length_km
    s_branch0 = line.source_z0 + x * line.params.z0
    zs1 = line.source_z1 + x * line.params.z1
    zg = net.grounding_z_ohm
    if zg is None:
        z0_eq = s_branch0
        divider0 = 1.0 + 0j
    else:
        # Zero-sequence current divider between relay side and the far-end
        # grounding path.
        t_branch0 = (1 - x) * line.params.z0 + zg
        total0 = s_branch0 + t_branch0
        if abs(total0) == 0:
            raise SingularNetworkError("zero-sequence network shorted")
        z0_eq = s_branch0 * t_branch0 / total0
        divider0 = t_branch0 / total0
    z_eq = (z0_eq, zs1, zs1)
    v_oc = (
        0j,
        e * w_pos + zs1 * (i1_inj * w_pos),
        zs1 * (i2_inj * w_neg),
    )
    i0f, i1f, i2f = _canonical_fault_currents(kind, z_eq, v_oc, sc.r_fault_ohm)

    # Relay branch currents and bus voltages (still in the relabeled frame).
    i0_rel = i0f * divider0
    i1_rel = i1f - i1_inj * w_pos
    i2_rel = i2f - i2_inj * w_neg
    v0_rel = -line.source_z0 * i0_rel
    v1_rel = e * w_pos - line.source_z1 * i1_rel
    v2_rel = -line.source_z1 * i2_rel

    # Undo the relabeling transform (inverse factors alpha^r / alpha^2r).
    u_pos = ALPHA ** (rotations % 3)
    u_neg = ALPHA ** (2 * rotations % 3)
    v_fault = from_sequence_triple(v0_rel, v1_rel * u_pos, v2_rel * u_neg, Unit.VOLT)
    i_fault = from_sequence_triple(i0_rel, i1_rel * u_pos, i2_rel * u_neg, Unit.AMPERE)

    return MeasurementRecord(v_pre, i_pre, v_fault, i_fault, sc)


def from_sequence_triple(zero: complex, pos: complex, neg: complex, unit: Unit) -> ThreePhaseSet:
    vec = _A @ np.array([zero, pos, neg], dtype=complex)
    return ThreePhaseSet(complex(vec[0]), complex(vec[1]), complex(vec[2]), unit)


# ---------------------------------------------------------------------------
# verification path: phase-coordinate branch/node equations
# ---------------------------------------------------------------------------

def _phase_impedance(z0: complex, z1: complex) -> np.ndarray:
    return _A @ np.diag([z0, z1, z1]).astype(complex) @ _A_INV


_FAULT_PHASES = {
    FaultLoop.AG: ("slg", (0,)),
    FaultLoop.BG: ("slg", (1,)),
    FaultLoop.CG: ("slg", (2,)),
    FaultLoop.AB: ("ll", (0, 1)),
    FaultLoop.BC: ("ll", (1, 2)),
    FaultLoop.CA: ("ll", (2, 0)),
    FaultLoop.ABG: ("dlg", (0, 1)),
    FaultLoop.BCG: ("dlg", (1, 2)),
    FaultLoop.CAG: ("dlg", (2, 0)),
    FaultLoop.ABC: ("sym", (0, 1, 2)),
}


def _solve_branch_system(
    net: NetworkConfig,
    line: CollectorLine,
    x_frac: float,
    i_ibr_abc: np.ndarray,
    fault: tuple[FaultLoop, float] | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve node voltages and branch currents of the source-fault-remote circuit.

    Unknown layout: V_S(0:3), V_F(3:6), V_T(6:9), I_src(9:12), I_sf(12:15),
    I_ft(15:18), optional grounding-branch currents, then fault-branch
    unknowns. Branch voltage laws keep zero impedances exact (no admittance
    inversion of segments).
    """
    e_abc = net.phase_voltage_v * np.array([1, ALPHA2, ALPHA], dtype=complex)
    zs = _phase_impedance(line.source_z0, line.source_z1)
    zsf = _phase_impedance(x_frac * line.params.z0, x_frac * line.params.z1)
    zft = _phase_impedance((1 - x_frac) * line.params.z0, (1 - x_frac) * line.params.z1)
    zg = net.grounding_z_ohm

    n_ground = 3 if zg is not None else 0
    extra = 0
    mode = phases = None
    if fault is not None:
        loop, _rf = fault
        mode, phases = _FAULT_PHASES[loop]
        extra = {"slg": 1, "ll": 1, "dlg": 3, "sym": 4}[mode]
    size = 18 + n_ground + extra
    m = np.zeros((size, size), dtype=complex)
    rhs = np.zeros(size, dtype=complex)

    sl_vs, sl_vf, sl_vt = slice(0, 3), slice(3, 6), slice(6, 9)
    sl_isrc, sl_isf, sl_ift = slice(9, 12), slice(12, 15), slice(15, 18)
    eye = np.eye(3)

    # Branch voltage laws.
    m[0:3, sl_vs] = eye
    m[0:3, sl_isrc] = zs
    rhs[0:3] = e_abc
    m[3:6, sl_vf] = eye
    m[3:6, sl_vs] = -eye
    m[3:6, sl_isf] = zsf
    m[6:9, sl_vt] = eye
    m[6:9, sl_vf] = -eye
    m[6:9, sl_ift] = zft

    # Kirchhoff current laws.
    m[9:12, sl_isrc] = eye
    m[9:12, sl_isf] = -eye
    m[12:15, sl_isf] = eye
    m[12:15, sl_ift] = -eye
    m[15:18, sl_ift] = eye
    rhs[15:18] = -i_ibr_abc

    if zg is not None:
        # Zero-sequence-only grounding branch at the remote node: its
        # positive/negative components vanish and its zero component obeys
        # sum(V_T) = zg * sum(I_g).
        sl_ig = slice(18, 21)
        m[15:18, sl_ig] = -eye
        m[18, sl_ig] = np.array([1, ALPHA, ALPHA2])
        m[19, sl_ig] = np.array([1, ALPHA2, ALPHA])
        m[20, sl_vt] = np.array([1.0, 1.0, 1.0])
        m[20, sl_ig] = np.array([-zg, -zg, -zg])

    if fault is not None:
        loop, rf = fault
        base = 18 + n_ground
        if mode == "slg":
            (p,) = phases
            i_idx = base
            m[12 + p, i_idx] -= 1.0
            m[i_idx, 3 + p] = 1.0
            m[i_idx, i_idx] = -rf
        elif mode == "ll":
            p, q = phases
            i_idx = base
            m[12 + p, i_idx] -= 1.0
            m[12 + q, i_idx] += 1.0
            m[i_idx, 3 + p] = 1.0
            m[i_idx, 3 + q] = -1.0
            m[i_idx, i_idx] = -rf
        elif mode == "dlg":
            p, q = phases
            ip_idx, iq_idx, vn_idx = base, base + 1, base + 2
            m[12 + p, ip_idx] -= 1.0
            m[12 + q, iq_idx] -= 1.0
            m[ip_idx, 3 + p] = 1.0
            m[ip_idx, vn_idx] = -1.0
            m[iq_idx, 3 + q] = 1.0
            m[iq_idx, vn_idx] = -1.0
            m[vn_idx, vn_idx] = 1.0
            m[vn_idx, ip_idx] = -rf
            m[vn_idx, iq_idx] = -rf
        else:  # sym
            vn_idx = base + 3
            for j, p in enumerate(phases):
                i_idx = base + j
                m[12 + p, i_idx] -= 1.0
                m[i_idx, 3 + p] = 1.0
                m[i_idx, vn_idx] = -1.0
                m[i_idx, i_idx] = -rf
            m[vn_idx, base:base + 3] = 1.0

    try:
        sol = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularNetworkError("singular branch/node system") from exc
    return sol[sl_vs], sol[sl_isf]


def nodal_oracle(net: NetworkConfig, sc: FaultScenario) -> MeasurementRecord:
    """Relay-point phasors computed independently from the full circuit equations."""
    line = _validate_scenario(net, sc)
    i_pre_inj = _prefault_injection(net, line, sc.generation_pu)
    x = sc.distance_km / line.params.length_km

    i_pre_abc = _A @ np.array([0j, i_pre_inj, 0j])
    v_s, i_s = _solve_branch_system(net, line, x, i_pre_abc, fault=None)
    v_pre = ThreePhaseSet(complex(v_s[0]), complex(v_s[1]), complex(v_s[2]), Unit.VOLT)
    i_pre = ThreePhaseSet(complex(i_s[0]), complex(i_s[1]), complex(i_s[2]), Unit.AMPERE)

    i1_inj, i2_inj = _fault_injections(net, line, sc, i_pre_inj)
    i_ibr_abc = _A @ np.array([0j, i1_inj, i2_inj])
    v_f, i_f = _solve_branch_system(
        net, line, x, i_ibr_abc, fault=(sc.fault_type, sc.r_fault_ohm)
    )
    v_fault = ThreePhaseSet(complex(v_f[0]), complex(v_f[1]), complex(v_f[2]), Unit.VOLT)
    i_fault = ThreePhaseSet(complex(i_f[0]), complex(i_f[1]), complex(i_f[2]), Unit.AMPERE)

    return MeasurementRecord(v_pre, i_pre, v_fault, i_fault, sc)


# ---------------------------------------------------------------------------
# dataset generation and CSV interchange
# ---------------------------------------------------------------------------

DATASET_COLUMNS = (
    "scenario_id", "split", "line_id", "fault_type",
    "d_true_km", "d_max_km", "r_fault_ohm", "angle_deg", "gen_pu",
    "va_pre_re", "va_pre_im", "vb_pre_re", "vb_pre_im", "vc_pre_re", "vc_pre_im",
    "ia_pre_re", "ia_pre_im", "ib_pre_re", "ib_pre_im", "ic_pre_re", "ic_pre_im",
    "va_fault_re", "va_fault_im", "vb_fault_re", "vb_fault_im", "vc_fault_re", "vc_fault_im",
    "ia_fault_re", "ia_fault_im", "ib_fault_re", "ib_fault_im", "ic_fault_re", "ic_fault_im",
)


def enumerate_grid(net: NetworkConfig, grid: ScenarioGrid) -> list[FaultScenario]:
    """Deterministic scenario enumeration ordered by
    (line, fault type, location, resistance, angle, generation)."""
    if grid.size() == 0:
        raise EmptyGridError("scenario grid has an empty Cartesian product")
    loop_rank = {loop: i for i, loop in enumerate(LOOP_ORDER)}
    scenarios = []
    idx = 0
    for line_id in sorted(grid.line_ids):
        length = net.line(line_id).params.length_km
        for ftype in sorted(grid.fault_types, key=loop_rank.__getitem__):
            for frac in sorted(grid.location_fractions):
                for rf in sorted(grid.resistances_ohm):
                    for angle in sorted(grid.angles_deg):
                        for gen in sorted(grid.generation_levels_pu):
                            scenarios.append(FaultScenario(
                                line_id=line_id,
                                fault_type=ftype,
                                distance_km=frac * length,
                                r_fault_ohm=rf,
                                inception_angle_deg=angle,
                                generation_pu=gen,
                                scenario_id=f"{grid.split_tag}-{idx:06d}",
                            ))
                            idx += 1
    return scenarios


def generate_dataset(
    net: NetworkConfig, grid: ScenarioGrid
) -> tuple[list[MeasurementRecord], list[dict]]:
    """Solve every grid point; returns records plus a skipped-row report."""
    records: list[MeasurementRecord] = []
    skipped: list[dict] = []
    for sc in enumerate_grid(net, grid):
        try:
            rec = solve_fault(net, sc)
        except (InvalidScenarioError, SingularNetworkError) as exc:
            skipped.append({"scenario_id": sc.scenario_id, "error": type(exc).__name__,
                            "message": str(exc)})
            continue
        records.append(replace(rec, split=grid.split_tag))
    return records, skipped


def _fmt(value: float) -> str:
    return repr(float(value))


def write_dataset_csv(records: list[MeasurementRecord], net: NetworkConfig, path: str) -> None:
    """Write records in the fixed dataset column order ('.' decimal separator)."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_COLUMNS)
        for rec in records:
            sc = rec.scenario
            length = net.line(sc.line_id).params.length_km
            row = [
                sc.scenario_id, rec.split, sc.line_id, sc.fault_type.value,
                _fmt(sc.distance_km), _fmt(length), _fmt(sc.r_fault_ohm),
                _fmt(sc.inception_angle_deg), _fmt(sc.generation_pu),
            ]
            for tri in (rec.v_pre, rec.i_pre, rec.v_fault, rec.i_fault):
                for ph in (tri.a, tri.b, tri.c):
                    row.append(_fmt(ph.real))
                    row.append(_fmt(ph.imag))
            writer.writerow(row)
    os.replace(tmp, path)


def read_dataset_rows(path: str) -> list[dict]:
    """Read a dataset (or estimates) CSV into raw row dicts, keeping extra columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(DATASET_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"dataset file {path} missing columns: {sorted(missing)}")
        return list(reader)


def record_from_row(row: dict) -> MeasurementRecord:
    sc = FaultScenario(
        line_id=row["line_id"],
        fault_type=FaultLoop(row["fault_type"]),
        distance_km=float(row["d_true_km"]),
        r_fault_ohm=float(row["r_fault_ohm"]),
        inception_angle_deg=float(row["angle_deg"]),
        generation_pu=float(row["gen_pu"]),
        scenario_id=row["scenario_id"],
    )
    return MeasurementRecord(
        v_pre=_tri_from_row(row, "v", "pre", Unit.VOLT),
        i_pre=_tri_from_row(row, "i", "pre", Unit.AMPERE),
        v_fault=_tri_from_row(row, "v", "fault", Unit.VOLT),
        i_fault=_tri_from_row(row, "i", "fault", Unit.AMPERE),
        scenario=sc,
        split=row["split"],
    )


def read_dataset_csv(path: str) -> list[MeasurementRecord]:
    """Read a dataset CSV back into measurement records."""
    return [record_from_row(row) for row in read_dataset_rows(path)]


def _tri_from_row(row: dict, kind: str, stage: str, unit: Unit) -> ThreePhaseSet:
    vals = []
    for ph in "abc":
        re_v = float(row[f"{kind}{ph}_{stage}_re"])
        im_v = float(row[f"{kind}{ph}_{stage}_im"])
        vals.append(complex(re_v, im_v))
    return ThreePhaseSet(vals[0], vals[1], vals[2], unit)


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------

def _complex_from_json(obj: dict, label: str) -> complex:
    try:
        return complex(float(obj["re"]), float(obj["im"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{label} must be an object {{re, im}}") from exc


def network_from_json(doc: dict) -> NetworkConfig:
    try:
        infeed_doc = doc.get("remote_infeed", {})
        infeed = RemoteInfeed(
            enabled=bool(infeed_doc.get("enabled", False)),
            max_current_pu=float(infeed_doc.get("max_current_pu", 1.2)),
            pf=float(infeed_doc.get("pf", 1.0)),
            neg_seq_fraction=float(infeed_doc.get("neg_seq_fraction", 0.05)),
            zero_seq_blocked=bool(infeed_doc.get("zero_seq_blocked", True)),
        )
        lines = []
        for ln in doc["lines"]:
            lines.append(CollectorLine(
                line_id=str(ln["line_id"]),
                params=LineParams(
                    z1=_complex_from_json(ln["z1"], "z1"),
                    z0=_complex_from_json(ln["z0"], "z0"),
                    length_km=float(ln["length_km"]),
                ),
                source_z1=_complex_from_json(ln["source_z1"], "source_z1"),
                source_z0=_complex_from_json(ln["source_z0"], "source_z0"),
            ))
        return NetworkConfig(
            lines=tuple(lines),
            nominal_kv=float(doc["nominal_kv"]),
            base_mva=float(doc["base_mva"]),
            remote_infeed=infeed,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid network config: {exc}") from exc


def load_network(path: str) -> NetworkConfig:
    with open(path) as fh:
        return network_from_json(json.load(fh))


def grid_from_json(doc: dict, split_tag: str) -> ScenarioGrid:
    try:
        return ScenarioGrid(
            fault_types=tuple(FaultLoop(ft) for ft in doc["fault_types"]),
            resistances_ohm=tuple(float(r) for r in doc["resistances_ohm"]),
            location_fractions=tuple(float(p) for p in doc["location_fractions"]),
            angles_deg=tuple(float(a) for a in doc["angles_deg"]),
            generation_levels_pu=tuple(float(g) for g in doc["generation_levels_pu"]),
            line_ids=tuple(str(l) for l in doc["line_ids"]),
            split_tag=split_tag,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid grid config: {exc}") from exc


def load_grids(path: str) -> dict[str, ScenarioGrid]:
    with open(path) as fh:
        doc = json.load(fh)
    grids = {}
    for tag in ("train", "test"):
        if tag in doc:
            grids[tag] = grid_from_json(doc[tag], tag)
    if not grids:
        raise ConfigError(f"grid file {path} defines neither 'train' nor 'test'")
    return grids
