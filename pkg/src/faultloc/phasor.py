"""Complex phasor algebra, symmetrical-component transforms, and fault-loop construction.

Phasors are plain Python ``complex`` values. Angles are radians internally;
degrees appear only at CLI/file boundaries.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass

from .errors import DegenerateLineError, ZeroLoopCurrentError

# Rotation operator a = 1 at +120 degrees.
ALPHA = cmath.exp(2j * math.pi / 3)
ALPHA2 = ALPHA * ALPHA

# Rotates the relay negative-sequence current onto the a-b loop fault current
# under ABC phase order (b lags a); the phase-pair loops are polarized with it.
_NEG_SEQ_ALIGN = cmath.exp(-1j * math.pi / 6)


class Unit(enum.Enum):
    VOLT = "volt"
    AMPERE = "ampere"


class FaultLoop(enum.Enum):
    """The ten supported fault loops, in canonical category order."""

    AG = "AG"
    BG = "BG"
    CG = "CG"
    AB = "AB"
    BC = "BC"
    CA = "CA"
    ABG = "ABG"
    BCG = "BCG"
    CAG = "CAG"
    ABC = "ABC"


LOOP_ORDER = (
    FaultLoop.AG, FaultLoop.BG, FaultLoop.CG,
    FaultLoop.AB, FaultLoop.BC, FaultLoop.CA,
    FaultLoop.ABG, FaultLoop.BCG, FaultLoop.CAG,
    FaultLoop.ABC,
)

GROUND_LOOPS = frozenset({
    FaultLoop.AG, FaultLoop.BG, FaultLoop.CG,
    FaultLoop.ABG, FaultLoop.BCG, FaultLoop.CAG,
})

# Each loop expressed as (number of cyclic phase rotations, A-referenced base loop).
CANONICAL_LOOP = {
    FaultLoop.AG: (0, FaultLoop.AG),
    FaultLoop.BG: (1, FaultLoop.AG),
    FaultLoop.CG: (2, FaultLoop.AG),
    FaultLoop.AB: (0, FaultLoop.AB),
    FaultLoop.BC: (1, FaultLoop.AB),
    FaultLoop.CA: (2, FaultLoop.AB),
    FaultLoop.ABG: (0, FaultLoop.ABG),
    FaultLoop.BCG: (1, FaultLoop.ABG),
    FaultLoop.CAG: (2, FaultLoop.ABG),
    FaultLoop.ABC: (0, FaultLoop.ABC),
}


@dataclass(frozen=True)
class ThreePhaseSet:
    """Phase-domain triple (a, b, c) sharing one unit."""

    a: complex
    b: complex
    c: complex
    unit: Unit

    def rotated(self, n: int = 1) -> "ThreePhaseSet":
        """Cyclic relabeling a<-b<-c<-a applied ``n`` times."""
        out = self
        for _ in range(n % 3):
            out = ThreePhaseSet(out.b, out.c, out.a, out.unit)
        return out


@dataclass(frozen=True)
class SequenceSet:
    """Symmetrical components (zero, positive, negative) of a three-phase set."""

    zero: complex
    pos: complex
    neg: complex
    unit: Unit


@dataclass(frozen=True)
class LineParams:
    """Total line impedances in ohm and length in km."""

    z1: complex
    z0: complex
    length_km: float

    def __post_init__(self) -> None:
        if self.length_km <= 0 or not math.isfinite(self.length_km):
            raise DegenerateLineError(f"length_km must be positive, got {self.length_km}")
        if abs(self.z1) == 0:
            raise DegenerateLineError("positive-sequence impedance must be nonzero")

    @property
    def z1_per_km(self) -> complex:
        return self.z1 / self.length_km

    @property
    def z0_per_km(self) -> complex:
        return self.z0 / self.length_km


@dataclass(frozen=True)
class LoopQuantities:
    """Loop voltage, compensated loop current, and polarizing fault current."""

    v_loop: complex
    i_loop: complex
    i_f: complex


def to_sequence(abc: ThreePhaseSet) -> SequenceSet:
    """Decompose a phase triple into symmetrical components."""
    zero = (abc.a + abc.b + abc.c) / 3
    pos = (abc.a + ALPHA * abc.b + ALPHA2 * abc.c) / 3
    neg = (abc.a + ALPHA2 * abc.b + ALPHA * abc.c) / 3
    return SequenceSet(zero, pos, neg, abc.unit)


def from_sequence(seq: SequenceSet) -> ThreePhaseSet:
    """Recompose a phase triple from its symmetrical components."""
    a = seq.zero + seq.pos + seq.neg
    b = seq.zero + ALPHA2 * seq.pos + ALPHA * seq.neg
    c = seq.zero + ALPHA * seq.pos + ALPHA2 * seq.neg
    return ThreePhaseSet(a, b, c, seq.unit)


def zero_seq_comp_factor(line: LineParams) -> complex:
    """Zero-sequence compensation factor (z0 - z1) / z1 of the line."""
    if abs(line.z1) == 0:
        raise DegenerateLineError("compensation factor undefined for |z1| = 0")
    return (line.z0 - line.z1) / line.z1


def loop_quantities(
    v_pre: ThreePhaseSet,
    i_pre: ThreePhaseSet,
    v_fault: ThreePhaseSet,
    i_fault: ThreePhaseSet,
    loop: FaultLoop,
    line: LineParams,
    min_loop_current: float = 0.0,
) -> LoopQuantities:
    """Build the loop voltage/current/polarizing triple for a fault loop.

    Non-A-referenced loops are produced by cyclic phase rotation of the four
    A-referenced definitions, which preserves the loop algebra. ABC sequence
    (b lags a by 120 degrees) is assumed for the negative-sequence rotation of
    the phase-to-phase loop.
    """
    rotations, base = CANONICAL_LOOP[loop]
    v = v_fault.rotated(rotations)
    i = i_fault.rotated(rotations)
    i_seq = to_sequence(i)
    k0 = zero_seq_comp_factor(line)

    if base is FaultLoop.AG:
        v_loop = v.a
        i_loop = i.a + k0 * i_seq.zero
        i_f = i_seq.zero
    elif base is FaultLoop.AB:
        v_loop = v.a - v.b
        i_loop = i.a - i.b
        i_f = i_seq.neg * _NEG_SEQ_ALIGN
    elif base is FaultLoop.ABG:
        v_loop = v.a + v.b
        i_loop = i.a + i.b + 2 * k0 * i_seq.zero
        i_f = i_seq.zero
    else:  # ABC
        v_loop = v.a - v.b
        i_loop = i.a - i.b
        i_f = i.a - i.b

    if min_loop_current > 0 and abs(i_loop) < min_loop_current:
        raise ZeroLoopCurrentError(
            f"|i_loop| = {abs(i_loop):.3e} below floor {min_loop_current:.3e} for loop {loop.value}"
        )
    return LoopQuantities(v_loop, i_loop, i_f)
