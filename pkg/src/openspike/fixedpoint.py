"""Saturating signed fixed-point arithmetic for membrane potentials.

All potentials, thresholds and synaptic sums use a single Q7.8 format:
16 bits total, 1 sign bit, 7 integer bits, 8 fractional bits. Arithmetic
saturates at the representable bounds instead of wrapping, which is what
the datapath adders do.

The decay multiplier never exists as a real multiplier: the decayed
potential is the sum of right-shifted copies of the potential, one shift
per set bit of an 8-bit decay code. `decay_shift_add` reproduces that
combinational shift-and-add network exactly, including its floor
(truncate toward minus infinity) shift semantics and its fixed ascending
summation order.

Array variants (`*_array`) operate on numpy int32 arrays with identical
element-wise semantics; both simulation levels build on them so their
arithmetic agrees bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

FRAC_BITS = 8
TOTAL_BITS = 16
SCALE = 1 << FRAC_BITS          # 256: raw value of 1.0
RAW_MIN = -(1 << (TOTAL_BITS - 1))   # -32768
RAW_MAX = (1 << (TOTAL_BITS - 1)) - 1  # 32767

DECAY_CODE_BITS = 8             # shift amounts k = 1..8


def _clamp(raw: int) -> int:
    if raw > RAW_MAX:
        return RAW_MAX
    if raw < RAW_MIN:
        return RAW_MIN
    return raw


@dataclass(frozen=True, slots=True)
class QFixed:
    """A Q7.8 value held as its raw 16-bit signed integer."""

    raw: int

    def __post_init__(self) -> None:
        if not RAW_MIN <= self.raw <= RAW_MAX:
            raise ValueError(f"raw value {self.raw} outside Q7.8 range")

    @classmethod
    def from_real(cls, x: float) -> "QFixed":
        return qfixed_from_real(x)

    def to_float(self) -> float:
        return self.raw / SCALE

    def __repr__(self) -> str:
        return f"QFixed({self.raw}={self.to_float():+.6g})"


QFIXED_ZERO = QFixed(0)
QFIXED_ONE = QFixed(SCALE)


def qfixed_from_real(x: float) -> QFixed:
    """Round-to-nearest-even conversion, saturating outside Q7.8 range."""
    if not np.isfinite(x):
        raise ValueError(f"cannot convert non-finite value {x!r}")
    return QFixed(_clamp(round(x * SCALE)))


def sat_add(a: QFixed, b: QFixed) -> QFixed:
    """Saturating addition; exact when the sum is representable."""
    return QFixed(_clamp(a.raw + b.raw))


def sat_sub(a: QFixed, b: QFixed) -> QFixed:
    """Saturating subtraction (a - b); avoids the -min negation trap."""
    return QFixed(_clamp(a.raw - b.raw))


def sat_neg(a: QFixed) -> QFixed:
    """Saturating negation; negation of RAW_MIN saturates to RAW_MAX."""
    return QFixed(_clamp(-a.raw))


@dataclass(frozen=True, slots=True)
class DecayCode:
    """8-bit decay-rate code selecting which shifted copies are summed.

    The stored byte is the binary fraction of the decay rate, most
    significant bit first: bit value 2^(8-k) of `bits` enables the term
    u >> k, contributing 2^-k to the rate. Hence `bits` equals
    rate * 256 exactly, the rate is always in [0, 1), and a zero code
    means a rate of exactly zero.
    """

    bits: int

    def __post_init__(self) -> None:
        if not 0 <= self.bits <= 0xFF:
            raise ValueError(f"decay code {self.bits} does not fit in 8 bits")

    @classmethod
    def from_beta(cls, beta: float) -> "DecayCode":
        """Nearest representable code for a decay rate in [0, 1)."""
        if not 0.0 <= beta < 1.0:
            raise ValueError(f"decay rate {beta} outside [0, 1)")
        return cls(min(round(beta * SCALE), 0xFF))

    @classmethod
    def from_shifts(cls, shifts: Iterable[int]) -> "DecayCode":
        """Code with exactly the given shift amounts (each in 1..8) enabled."""
        bits = 0
        for k in shifts:
            if not 1 <= k <= DECAY_CODE_BITS:
                raise ValueError(f"shift amount {k} outside 1..{DECAY_CODE_BITS}")
            bits |= 1 << (DECAY_CODE_BITS - k)
        return cls(bits)

    @property
    def shifts(self) -> tuple[int, ...]:
        """Enabled shift amounts in ascending order."""
        return tuple(
            k
            for k in range(1, DECAY_CODE_BITS + 1)
            if self.bits & (1 << (DECAY_CODE_BITS - k))
        )

    @property
    def beta(self) -> float:
        """The encoded decay rate; exact (denominator is a power of two)."""
        return self.bits / SCALE

    def popcount(self) -> int:
        return bin(self.bits).count("1")

    def __repr__(self) -> str:
        return f"DecayCode({self.bits:#04x}, beta={self.beta})"


def decay_shift_add(u: QFixed, beta: DecayCode) -> QFixed:
    """Hardware-exact decayed potential beta*u via shift-and-add.

    Sums arithmetic-shift-right(u, k) over the enabled shifts in
    ascending k, saturating after each addition. Shift semantics are
    floor (two's-complement shifter), so e.g. -1 >> k stays -1.
    """
    acc = 0
    for k in beta.shifts:
        acc = _clamp(acc + (u.raw >> k))
    return QFixed(acc)


# ---------------------------------------------------------------------------
# Array kernels. int32 carriers; every step clamps to the 16-bit range so
# the element-wise results match the scalar ops exactly.
# ---------------------------------------------------------------------------

def sat_clamp_array(raw: np.ndarray) -> np.ndarray:
    return np.clip(raw, RAW_MIN, RAW_MAX)


def sat_add_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return sat_clamp_array(a.astype(np.int32) + b)


def sat_sub_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return sat_clamp_array(a.astype(np.int32) - b)


def decay_shift_add_array(u_raw: np.ndarray, beta: DecayCode) -> np.ndarray:
    """Element-wise decay_shift_add over an int32 raw-value array."""
    u_raw = u_raw.astype(np.int32)
    acc = np.zeros_like(u_raw)
    for k in beta.shifts:
        acc = sat_clamp_array(acc + (u_raw >> k))
    return acc


def counts_to_raw_array(counts: np.ndarray) -> np.ndarray:
    """Convert integer synaptic-accumulator counts to saturated Q7.8 raw.

    One spike through a +1 weight contributes exactly 1.0 potential
    units (raw 256); large accumulations clamp at the format bounds.
    """
    return sat_clamp_array(counts.astype(np.int32) * SCALE)
