"""Shared domain types: values on the unit circle (plus an absorbing zero),
correlation patterns, index bounds, and the sequence-source abstraction that
every generator implements.

Phases are stored as fractions of a turn in [0, 1), never radians: a value
``UnitValue(phase=p)`` means ``exp(2*pi*i*p)``.  Exact generators keep phases
as ``fractions.Fraction`` so that membership in the m-th roots of unity stays
exact; float phases are used where only statistical accuracy is needed.
"""

from __future__ import annotations

import cmath
from abc import ABC, abstractmethod
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Optional, Sequence, Union

import numpy as np

#: Default circular tolerance for comparing phases.
PHASE_TOL = 2.0 ** -40

PhaseLike = Union[Fraction, float, int]


class ChowlaLabError(Exception):
    """Base class for all library errors."""


class OutOfRange(ChowlaLabError):
    """Requested an index beyond the declared length of a source."""


class SourceTooShort(ChowlaLabError):
    """A computation needs more terms than the source can supply."""


def phase_mod1(p: PhaseLike) -> PhaseLike:
    """Reduce a phase into [0, 1), preserving Fraction exactness."""
    if isinstance(p, Fraction):
        return p % 1
    if isinstance(p, int):
        return Fraction(0)
    return float(p) % 1.0


def circular_distance(a: float, b: float) -> float:
    """Distance between two phases on the circle of circumference 1."""
    d = abs(float(a) - float(b)) % 1.0
    return min(d, 1.0 - d)


@dataclass(frozen=True)
class UnitValue:
    """A point of the unit circle together with an absorbing zero.

    ``is_zero`` selects the zero element; otherwise the value is
    ``exp(2*pi*i*phase)`` with modulus exactly one (the modulus is implicit,
    never stored).
    """

    phase: PhaseLike = Fraction(0)
    is_zero: bool = False

    def __post_init__(self) -> None:
        if self.is_zero:
            object.__setattr__(self, "phase", Fraction(0))
        else:
            object.__setattr__(self, "phase", phase_mod1(self.phase))

    @classmethod
    def zero(cls) -> "UnitValue":
        return cls(Fraction(0), True)

    @classmethod
    def one(cls) -> "UnitValue":
        return cls(Fraction(0), False)

    @classmethod
    def root(cls, k: int, m: int) -> "UnitValue":
        """The root of unity exp(2*pi*i*k/m), stored exactly."""
        if m < 1:
            raise ValueError("root order must be >= 1")
        return cls(Fraction(k, m), False)

    @property
    def is_exact(self) -> bool:
        return isinstance(self.phase, Fraction)

    def to_complex(self) -> complex:
        if self.is_zero:
            return 0j
        return cmath.exp(2j * cmath.pi * float(self.phase))

    def isclose(self, other: "UnitValue", tol: float = PHASE_TOL) -> bool:
        """Equality up to a circular phase tolerance; zero only equals zero."""
        if self.is_zero or other.is_zero:
            return self.is_zero == other.is_zero
        return circular_distance(float(self.phase), float(other.phase)) <= tol

    def as_json_pair(self) -> list:
        """Serialize as [decimal phase string (18+ digits), zero flag]."""
        return [format(float(self.phase), ".18f"), self.is_zero]

    @classmethod
    def from_json_pair(cls, pair: Sequence) -> "UnitValue":
        phase = float(pair[0])
        zero = bool(pair[1])
        if not zero and not 0.0 <= phase < 1.0:
            raise ValueError(f"phase {phase!r} outside [0, 1)")
        return cls(phase, zero)


def uv_pow(x: UnitValue, n: int) -> UnitValue:
    """Extended power: x**n on the circle, zero at zero (including n = 0)."""
    if x.is_zero:
        return UnitValue.zero()
    return UnitValue(phase_mod1(x.phase * n), False)


def uv_mul(x: UnitValue, y: UnitValue) -> UnitValue:
    """Product in the monoid: zero is absorbing, otherwise phases add mod 1."""
    if x.is_zero or y.is_zero:
        return UnitValue.zero()
    return UnitValue(phase_mod1(x.phase + y.phase), False)


@dataclass(frozen=True)
class IndexBound:
    """How large an m is needed so the sequence lives in U(m) plus zero.

    ``finite(m)`` declares exact membership up to a vanishing exceptional set;
    ``exceeds_tested(m_max)`` records that no m up to m_max worked;
    ``infinite()`` declares that no finite m ever will.
    """

    kind: str
    m: Optional[int] = None

    _KINDS = ("finite", "exceeds_tested", "infinite")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown index-bound kind {self.kind!r}")
        if self.kind == "finite":
            if self.m is None or self.m < 2:
                raise ValueError("finite index requires m >= 2")
        elif self.kind == "exceeds_tested":
            if self.m is None or self.m < 2:
                raise ValueError("exceeds_tested requires the tested m_max >= 2")
        elif self.m is not None:
            raise ValueError("infinite index carries no m")

    @classmethod
    def finite(cls, m: int) -> "IndexBound":
        return cls("finite", m)

    @classmethod
    def exceeds_tested(cls, m_max: int) -> "IndexBound":
        return cls("exceeds_tested", m_max)

    @classmethod
    def infinite(cls) -> "IndexBound":
        return cls("infinite", None)

    @property
    def modulus(self) -> Optional[int]:
        """The modulus for exponent reduction: m when finite, else None."""
        return self.m if self.kind == "finite" else None


@dataclass(frozen=True)
class Pattern:
    """Shifts a_1 < ... < a_r with integer exponents, one per shift.

    Structural invariants (r >= 1, a_1 >= 0, strictly increasing shifts) are
    enforced at construction.  Whether the exponents are admissible relative
    to an index bound is a separate check, see :func:`pattern_validate`.
    """

    shifts: tuple
    exponents: tuple

    def __post_init__(self) -> None:
        shifts = tuple(int(a) for a in self.shifts)
        exps = tuple(int(i) for i in self.exponents)
        object.__setattr__(self, "shifts", shifts)
        object.__setattr__(self, "exponents", exps)
        if len(shifts) == 0:
            raise ValueError("empty pattern (r = 0) is rejected")
        if len(shifts) != len(exps):
            raise ValueError("shifts and exponents must have equal length")
        if shifts[0] < 0:
            raise ValueError("shifts must be non-negative")
        if any(b <= a for a, b in zip(shifts, shifts[1:])):
            raise ValueError("shifts must be strictly increasing")

    @property
    def r(self) -> int:
        return len(self.shifts)

    @property
    def max_shift(self) -> int:
        return self.shifts[-1]

    def conjugate(self) -> "Pattern":
        return Pattern(self.shifts, tuple(-i for i in self.exponents))

    def rebased(self, c: int) -> "Pattern":
        return Pattern(tuple(a + c for a in self.shifts), self.exponents)

    def reduced(self, m: Optional[int]) -> "Pattern":
        """Reduce exponents mod m (finite index); identity otherwise."""
        if m is None:
            return self
        return Pattern(self.shifts, tuple(i % m for i in self.exponents))

    def label(self) -> str:
        sh = ",".join(str(a) for a in self.shifts)
        ex = ",".join(str(i) for i in self.exponents)
        return f"({sh})^({ex})"


def pattern_validate(p: Pattern, idx: Optional[IndexBound] = None) -> bool:
    """True iff the exponents are not all trivial relative to the index bound.

    For a finite index m the exponents are reduced mod m first (an exponent
    that is a multiple of m acts as 0 on U(m) plus zero); for an infinite or
    merely-tested bound the literal integers are used.
    """
    m = idx.modulus if idx is not None else None
    if m is not None:
        return any(i % m != 0 for i in p.exponents)
    return any(i != 0 for i in p.exponents)


class SequenceSource(ABC):
    """A deterministic, indexable sequence of :class:`UnitValue`.

    Evaluation at the same index with the same seed is bit-identical, and
    evaluation at distinct indices may proceed in any order (all randomness
    is counter-based).  ``length`` is None for unbounded sources.
    """

    length: Optional[int] = None
    declared_index: Optional[IndexBound] = None
    seed: Optional[int] = None

    #: When every value lies exactly in U(m) plus zero with phases stored as
    #: Fractions of denominator dividing this, estimators may use the exact
    #: integer-residue fast path.  None disables it.
    root_denominator: Optional[int] = None

    #: Upper bound on the absolute phase error of emitted values (for sources
    #: backed by finite-precision streams); used only as a reporting hint.
    phase_error_hint: float = 0.0

    @abstractmethod
    def value_at(self, n: int) -> UnitValue:
        """The n-th term."""

    def _check_range(self, start: int, stop: int) -> None:
        if start < 0 or stop < start:
            raise OutOfRange(f"bad range [{start}, {stop})")
        if self.length is not None and stop > self.length:
            raise OutOfRange(f"range [{start}, {stop}) exceeds length {self.length}")

    def phase_block(self, start: int, stop: int):
        """Phases and non-zero mask for indices [start, stop) as numpy arrays.

        The default implementation loops over :meth:`value_at`; concrete
        sources override it with vectorized versions.
        """
        self._check_range(start, stop)
        n = stop - start
        phases = np.empty(n, dtype=np.float64)
        nonzero = np.empty(n, dtype=bool)
        for j in range(n):
            v = self.value_at(start + j)
            phases[j] = float(v.phase)
            nonzero[j] = not v.is_zero
        return phases, nonzero

    def residue_block(self, start: int, stop: int):
        """Integer residues k (phase = k/m) and non-zero mask, exact sources only."""
        m = self.root_denominator
        if m is None:
            raise ChowlaLabError("source does not expose exact residues")
        self._check_range(start, stop)
        n = stop - start
        res = np.zeros(n, dtype=np.int64)
        nonzero = np.empty(n, dtype=bool)
        for j in range(n):
            v = self.value_at(start + j)
            nonzero[j] = not v.is_zero
            if not v.is_zero:
                f = v.phase if isinstance(v.phase, Fraction) else Fraction(v.phase)
                if m % f.denominator != 0:
                    raise ChowlaLabError("phase denominator does not divide declared root order")
                res[j] = int(f * m) % m
        return res, nonzero

    def values(self, start: int, stop: int) -> Iterator[UnitValue]:
        self._check_range(start, stop)
        for n in range(start, stop):
            yield self.value_at(n)

    def take(self, n: int) -> list:
        return list(self.values(0, n))


def unit_complex(phases: np.ndarray) -> np.ndarray:
    """exp(2*pi*i*phase) for an array of (possibly unreduced) phase sums.

    The argument is reduced mod 1 before scaling by 2*pi, so large phase sums
    lose no precision, and the computation is split by sign so that negating
    the input yields the complex conjugate bit-for-bit.
    """
    sign = np.where(phases < 0.0, -1.0, 1.0)
    a = np.mod(np.abs(phases), 1.0)
    ang = 2.0 * np.pi * a
    return np.cos(ang) + 1j * sign * np.sin(ang)


def roots_table(m: int) -> np.ndarray:
    """Complex table of the m-th roots of unity, conjugate-symmetric bitwise."""
    tab = np.empty(m, dtype=np.complex128)
    for j in range(m // 2 + 1):
        ang = 2.0 * np.pi * (j / m)
        tab[j] = complex(np.cos(ang), np.sin(ang))
    for j in range(m // 2 + 1, m):
        tab[j] = tab[m - j].conjugate()
    return tab
