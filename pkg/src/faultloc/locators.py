"""One-terminal fault-distance estimators.

All methods consume the relay-point loop quantities and return a
:class:`DistanceEstimate`. A failed guard (tiny denominator, method not
defined for the loop) yields ``valid=False`` with a diagnostic instead of an
exception, so no NaN/Inf ever escapes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .phasor import (
    GROUND_LOOPS,
    FaultLoop,
    LineParams,
    LoopQuantities,
    loop_quantities,
    to_sequence,
)
from .simulator import MeasurementRecord

# Relative floor for Im(z1 * i_loop * conj(pol)) style denominators.
DENOMINATOR_GUARD = 1e-12


class LocatorMethod(enum.Enum):
    MM = "MM"
    IMPE = "IMPE"
    REAC = "REAC"
    TAKS = "TAKS"
    TAKN = "TAKN"
    TAKZ = "TAKZ"


METHOD_ORDER = (
    LocatorMethod.IMPE, LocatorMethod.REAC, LocatorMethod.TAKS,
    LocatorMethod.TAKN, LocatorMethod.TAKZ, LocatorMethod.MM,
)


@dataclass(frozen=True)
class DistanceEstimate:
    d_est_km: float
    method: LocatorMethod
    loop: FaultLoop
    valid: bool
    diagnostic: str = ""


def _invalid(method: LocatorMethod, loop: FaultLoop, reason: str) -> DistanceEstimate:
    return DistanceEstimate(math.nan, method, loop, valid=False, diagnostic=reason)


def _estimate(method: LocatorMethod, loop: FaultLoop, fraction: float,
              line: LineParams) -> DistanceEstimate:
    d = fraction * line.length_km
    if not math.isfinite(d):
        return _invalid(method, loop, "non-finite estimate")
    return DistanceEstimate(d, method, loop, valid=True)


def _polarized_fraction(lq: LoopQuantities, pol: complex, line: LineParams):
    """Distance fraction Im(v * conj(pol)) / Im(z1 * i * conj(pol)), or None
    when the denominator is below guard."""
    num = (lq.v_loop * pol.conjugate()).imag
    den = (line.z1 * lq.i_loop * pol.conjugate()).imag
    scale = abs(line.z1) * abs(lq.i_loop) * abs(pol)
    if scale == 0 or abs(den) < DENOMINATOR_GUARD * scale:
        return None
    return num / den


def multi_method(rec: MeasurementRecord, loop: FaultLoop, line: LineParams) -> DistanceEstimate:
    """Reactive-power ratio estimator polarized by the loop fault current."""
    lq = loop_quantities(rec.v_pre, rec.i_pre, rec.v_fault, rec.i_fault, loop, line)
    frac = _polarized_fraction(lq, lq.i_f, line)
    if frac is None:
        return _invalid(LocatorMethod.MM, loop, "denominator below guard")
    return _estimate(LocatorMethod.MM, loop, frac, line)


def locate(method: LocatorMethod, rec: MeasurementRecord, loop: FaultLoop,
           line: LineParams) -> DistanceEstimate:
    """Dispatch a locator method; see module docstring for guard semantics."""
    if method is LocatorMethod.MM:
        return multi_method(rec, loop, line)

    if method is LocatorMethod.TAKZ and loop not in GROUND_LOOPS:
        return _invalid(method, loop, "zero-sequence polarization needs a ground loop")
    if method is LocatorMethod.TAKN and loop is FaultLoop.ABC:
        return _invalid(method, loop, "negative-sequence polarization undefined for three-phase faults")

    lq = loop_quantities(rec.v_pre, rec.i_pre, rec.v_fault, rec.i_fault, loop, line)

    if method is LocatorMethod.IMPE:
        if abs(lq.i_loop) == 0:
            return _invalid(method, loop, "zero loop current")
        frac = abs(lq.v_loop / lq.i_loop) / abs(line.z1)
        return _estimate(method, loop, frac, line)

    if method is LocatorMethod.REAC:
        if abs(lq.i_loop) == 0:
            return _invalid(method, loop, "zero loop current")
        if abs(line.z1.imag) < DENOMINATOR_GUARD * abs(line.z1):
            return _invalid(method, loop, "line reactance below guard")
        frac = (lq.v_loop / lq.i_loop).imag / line.z1.imag
        return _estimate(method, loop, frac, line)

    if method is LocatorMethod.TAKS:
        lq_pre = loop_quantities(rec.v_pre, rec.i_pre, rec.v_pre, rec.i_pre, loop, line)
        pol = lq.i_loop - lq_pre.i_loop
    elif method is LocatorMethod.TAKN:
        pol = to_sequence(rec.i_fault).neg
    elif method is LocatorMethod.TAKZ:
        pol = to_sequence(rec.i_fault).zero
    else:
        raise ValueError(f"unhandled locator method {method}")

    if abs(pol) == 0:
        return _invalid(method, loop, "zero polarizing current")
    frac = _polarized_fraction(lq, pol, line)
    if frac is None:
        return _invalid(method, loop, "denominator below guard")
    return _estimate(method, loop, frac, line)


def applicable(method: LocatorMethod, loop: FaultLoop) -> bool:
    """Whether a method is defined at all for the loop (before numeric guards)."""
    if method is LocatorMethod.TAKZ:
        return loop in GROUND_LOOPS
    if method is LocatorMethod.TAKN:
        return loop is not FaultLoop.ABC
    return True
