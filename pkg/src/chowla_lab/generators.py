"""Concrete sequence sources: power phases from certified streams, seeded
i.i.d. samplers on roots of unity or the circle, products with a 0/1 support
sequence, block maps over i.i.d. symbol streams, a piecewise-expanding circle
example, and file-backed replay.

All randomness is counter-based (see :mod:`chowla_lab.rng`): the value at an
index never depends on evaluation order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from math import lcm
from typing import Optional, Sequence, Tuple

import numpy as np

from . import rng
from .bigphase import BINARY_MAGIC, PhaseStream
from .core import (ChowlaLabError, IndexBound, OutOfRange, SequenceSource,
                   UnitValue)


class BadSupport(ChowlaLabError):
    """A support sequence emitted a value outside {0, 1}."""


class ParseError(ChowlaLabError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class LengthMismatch(ChowlaLabError):
    """Record count disagrees with the declared length in the header."""


# ---------------------------------------------------------------------------
# power phases


class PowerPhaseSource(SequenceSource):
    """z(n) = exp(2*pi*i * frac(beta**n * g(beta))) from a certified stream."""

    def __init__(self, stream: PhaseStream):
        if stream.n_max < 1:
            raise ValueError("stream emitted no terms")
        self.stream = stream
        self.length = stream.n_max
        beta = stream.beta
        integer_beta = beta.is_exact and beta.exact.denominator == 1
        self.declared_index = IndexBound.finite(2) if integer_beta else IndexBound.infinite()
        self.phase_error_hint = stream.max_phase_error()

    def value_at(self, n: int) -> UnitValue:
        if not 0 <= n < self.length:
            raise OutOfRange(f"term {n} beyond stream length {self.length}")
        return UnitValue(float(self.stream.fracs[n]), False)

    def phase_block(self, start: int, stop: int):
        self._check_range(start, stop)
        return self.stream.fracs[start:stop].copy(), np.ones(stop - start, dtype=bool)


def power_phase_source(stream: PhaseStream) -> PowerPhaseSource:
    return PowerPhaseSource(stream)


# ---------------------------------------------------------------------------
# i.i.d. samplers


class IidSource(SequenceSource):
    """Independent draws: zero with probability zero_prob, otherwise uniform
    on the m-th roots of unity (exact phases k/m), or on the circle for
    m = None (53-bit dyadic phases)."""

    def __init__(self, m: Optional[int], zero_prob: float = 0.0, seed: int = 0):
        if m is not None and m < 2:
            raise ValueError("m must be >= 2 (or None for the circle)")
        if not 0.0 <= zero_prob < 1.0 and zero_prob != 1.0:
            raise ValueError("zero_prob must lie in [0, 1]")
        self.m = m
        self.zero_prob = float(zero_prob)
        self.seed = seed
        self.length = None
        self.declared_index = IndexBound.finite(m) if m is not None else IndexBound.infinite()
        self.root_denominator = m

    def _is_zero(self, n: int) -> bool:
        if self.zero_prob == 0.0:
            return False
        return rng.uniform01(self.seed, rng.STREAM_ZERO, n) < self.zero_prob

    def value_at(self, n: int) -> UnitValue:
        if self._is_zero(n):
            return UnitValue.zero()
        if self.m is None:
            return UnitValue(rng.uniform01(self.seed, rng.STREAM_VALUE, n), False)
        return UnitValue.root(rng.randbelow(self.seed, rng.STREAM_VALUE, n, self.m), self.m)

    def _zero_mask(self, start: int, stop: int) -> np.ndarray:
        if self.zero_prob == 0.0:
            return np.ones(stop - start, dtype=bool)
        u = rng.uniform01_block(self.seed, rng.STREAM_ZERO, start, stop)
        return u >= self.zero_prob

    def phase_block(self, start: int, stop: int):
        self._check_range(start, stop)
        nonzero = self._zero_mask(start, stop)
        if self.m is None:
            phases = rng.uniform01_block(self.seed, rng.STREAM_VALUE, start, stop)
        else:
            ks = rng.randbelow_block(self.seed, rng.STREAM_VALUE, start, stop, self.m)
            phases = ks.astype(np.float64) / self.m
        phases[~nonzero] = 0.0
        return phases, nonzero

    def residue_block(self, start: int, stop: int):
        if self.m is None:
            return super().residue_block(start, stop)
        self._check_range(start, stop)
        nonzero = self._zero_mask(start, stop)
        ks = rng.randbelow_block(self.seed, rng.STREAM_VALUE, start, stop, self.m)
        ks[~nonzero] = 0
        return ks, nonzero


def iid_source(m: Optional[int], zero_prob: float = 0.0, seed: int = 0) -> IidSource:
    return IidSource(m, zero_prob, seed)


class HatSource(SequenceSource):
    """Pointwise product of a fresh i.i.d. sampler with a 0/1 support
    sequence: zero where the support is zero, an independent uniform root of
    unity (or circle point) where it is one."""

    def __init__(self, support: SequenceSource, m: Optional[int], seed: int = 0):
        if m is not None and m < 2:
            raise ValueError("m must be >= 2 (or None for the circle)")
        self.support = support
        self.m = m
        self.seed = seed
        self.length = support.length
        self.declared_index = IndexBound.finite(m) if m is not None else IndexBound.infinite()
        self.root_denominator = m

    def value_at(self, n: int) -> UnitValue:
        y = self.support.value_at(n)
        if y.is_zero:
            return UnitValue.zero()
        if y.phase != 0:
            raise BadSupport(f"support value at {n} has phase {y.phase!r}, not in {{0, 1}}")
        if self.m is None:
            return UnitValue(rng.uniform01(self.seed, rng.STREAM_VALUE, n), False)
        return UnitValue.root(rng.randbelow(self.seed, rng.STREAM_VALUE, n, self.m), self.m)

    def _support_mask(self, start: int, stop: int) -> np.ndarray:
        phases, nonzero = self.support.phase_block(start, stop)
        if np.any(phases[nonzero] != 0.0):
            raise BadSupport("support emitted a non-zero value with phase != 0")
        return nonzero

    def phase_block(self, start: int, stop: int):
        self._check_range(start, stop)
        nonzero = self._support_mask(start, stop)
        if self.m is None:
            phases = rng.uniform01_block(self.seed, rng.STREAM_VALUE, start, stop)
        else:
            ks = rng.randbelow_block(self.seed, rng.STREAM_VALUE, start, stop, self.m)
            phases = ks.astype(np.float64) / self.m
        phases[~nonzero] = 0.0
        return phases, nonzero

    def residue_block(self, start: int, stop: int):
        if self.m is None:
            return super().residue_block(start, stop)
        self._check_range(start, stop)
        nonzero = self._support_mask(start, stop)
        ks = rng.randbelow_block(self.seed, rng.STREAM_VALUE, start, stop, self.m)
        ks[~nonzero] = 0
        return ks, nonzero


def hat_source(support: SequenceSource, m: Optional[int], seed: int = 0) -> HatSource:
    return HatSource(support, m, seed)


# ---------------------------------------------------------------------------
# block maps


def _as_fraction(x) -> Fraction:
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x)


@dataclass(frozen=True)
class BlockMap:
    """A function on length-l words over a finite alphabet, valued in the
    m-th roots of unity plus zero, together with symbol weights.

    Symbols are opaque small integers 0..len(alphabet)-1.  The table must be
    total on alphabet**l; weights must be non-negative and sum to one.
    """

    alphabet: tuple
    l: int
    table: dict
    symbol_weights: tuple
    declared_m: int = 0  # 0 means derive from the table

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        object.__setattr__(self, "symbol_weights",
                           tuple(_as_fraction(w) for w in self.symbol_weights))
        if self.l < 1:
            raise ValueError("word length l must be >= 1")
        if len(self.symbol_weights) != len(self.alphabet):
            raise ValueError("one weight per symbol required")
        if any(w < 0 for w in self.symbol_weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.symbol_weights) - 1) > Fraction(1, 1 << 40):
            raise ValueError("weights must sum to 1")
        n_words = len(self.alphabet) ** self.l
        if len(self.table) != n_words:
            raise ValueError(f"table must be total on alphabet^l ({n_words} words)")
        denoms = [1]
        for w, v in self.table.items():
            if len(w) != self.l:
                raise ValueError(f"table key {w!r} has wrong length")
            if not v.is_zero:
                if not isinstance(v.phase, Fraction):
                    raise ValueError("table values need exact rational phases")
                denoms.append(v.phase.denominator)
        m = self.declared_m or max(2, reduce(lcm, denoms))
        if any(not v.is_zero and (m % v.phase.denominator) != 0 for v in self.table.values()):
            raise ValueError(f"table values do not lie in U({m})")
        object.__setattr__(self, "declared_m", m)

    @property
    def m(self) -> int:
        return self.declared_m

    @property
    def n_symbols(self) -> int:
        return len(self.alphabet)

    def value_of_word(self, word: Tuple[int, ...]) -> UnitValue:
        return self.table[tuple(word)]

    def residue_of_word(self, word) -> Tuple[int, bool]:
        """(k, nonzero) with phase k/m for non-zero values."""
        v = self.table[tuple(word)]
        if v.is_zero:
            return 0, False
        return int(v.phase * self.m) % self.m, True

    def word_code(self, word) -> int:
        code = 0
        for s in word:
            code = code * self.n_symbols + s
        return code

    def code_tables(self):
        """(residues, nonzero) arrays indexed by word code, for fast lookup."""
        a, l = self.n_symbols, self.l
        res = np.zeros(a ** l, dtype=np.int64)
        nz = np.zeros(a ** l, dtype=bool)
        for word, v in self.table.items():
            c = self.word_code(word)
            k, good = self.residue_of_word(word)
            res[c] = k
            nz[c] = good
        return res, nz


def blockmap_to_json(bm: BlockMap) -> dict:
    return {
        "alphabet": list(bm.alphabet),
        "l": bm.l,
        "m": bm.m,
        "weights": [str(w) for w in bm.symbol_weights],
        "table": [[list(word), str(v.phase), v.is_zero]
                  for word, v in sorted(bm.table.items())],
    }


def blockmap_from_json(doc: dict) -> BlockMap:
    table = {}
    for word, phase, is_zero in doc["table"]:
        table[tuple(word)] = UnitValue.zero() if is_zero else UnitValue(Fraction(str(phase)))
    return BlockMap(
        alphabet=tuple(doc["alphabet"]),
        l=int(doc["l"]),
        table=table,
        symbol_weights=tuple(Fraction(str(w)) for w in doc["weights"]),
        declared_m=int(doc.get("m", 0)),
    )


def load_blockmap(path) -> BlockMap:
    with open(path) as fh:
        return blockmap_from_json(json.load(fh))


def save_blockmap(bm: BlockMap, path) -> None:
    with open(path, "w") as fh:
        json.dump(blockmap_to_json(bm), fh, indent=1)


def _uniform_weights(k: int):
    return tuple(Fraction(1, k) for _ in range(k))


def homogeneous_pair_map() -> BlockMap:
    """3-symbol pair map taking each of +1, -1, 0 once per left symbol."""
    plus, minus, zero = UnitValue.one(), UnitValue.root(1, 2), UnitValue.zero()
    table = {
        (0, 0): plus, (1, 2): plus, (2, 1): plus,
        (0, 1): minus, (1, 0): minus, (2, 2): minus,
        (2, 0): zero, (0, 2): zero, (1, 1): zero,
    }
    return BlockMap((0, 1, 2), 2, table, _uniform_weights(3), declared_m=2)


def inhomogeneous_pair_map() -> BlockMap:
    """4-symbol pair map with a lopsided support; its tree dies out unevenly."""
    plus, minus, zero = UnitValue.one(), UnitValue.root(1, 2), UnitValue.zero()
    table = {(a, b): zero for a in range(4) for b in range(4)}
    table[(0, 1)] = plus
    table[(1, 3)] = minus
    table[(2, 0)] = minus
    return BlockMap((0, 1, 2, 3), 2, table, _uniform_weights(4), declared_m=2)


def mean_zero_correlated_map() -> BlockMap:
    """Pair map with zero mean but a non-vanishing two-point moment."""
    plus, minus, zero = UnitValue.one(), UnitValue.root(1, 2), UnitValue.zero()
    table = {(a, b): zero for a in range(3) for b in range(3)}
    table[(0, 1)] = plus
    table[(1, 2)] = minus
    return BlockMap((0, 1, 2), 2, table, _uniform_weights(3), declared_m=2)


def star_product_map(m: int) -> BlockMap:
    """Dependent construction: the value is the root-of-unity symbol when the
    next symbol is the star marker, zero otherwise.

    Symbols 0..m-1 are the roots exp(2*pi*i*k/m), symbol m is a weight-zero
    placeholder for the value zero, and symbol m+1 is the star.  Weights are
    1/(2m) per root and 1/2 for the star.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    star = m + 1
    table = {}
    for a in range(m + 2):
        for b in range(m + 2):
            if a < m and b == star:
                table[(a, b)] = UnitValue.root(a, m)
            else:
                table[(a, b)] = UnitValue.zero()
    weights = [Fraction(1, 2 * m)] * m + [Fraction(0)] + [Fraction(1, 2)]
    return BlockMap(tuple(range(m + 2)), 2, table, tuple(weights), declared_m=m)


class BlockMapSource(SequenceSource):
    """z(n) = table(x_n, ..., x_{n+l-1}) over an i.i.d. symbol stream drawn
    from the block map's symbol weights."""

    def __init__(self, bm: BlockMap, seed: int = 0):
        self.bm = bm
        self.seed = seed
        self.length = None
        self.declared_index = IndexBound.finite(bm.m)
        self.root_denominator = bm.m
        cum = np.cumsum([float(w) for w in bm.symbol_weights])
        cum[-1] = 1.0
        self._cum = cum
        self._res, self._nz = bm.code_tables()

    def symbol_at(self, n: int) -> int:
        u = rng.uniform01(self.seed, rng.STREAM_SYMBOL, n)
        return int(np.searchsorted(self._cum, u, side="right"))

    def symbol_block(self, start: int, stop: int) -> np.ndarray:
        u = rng.uniform01_block(self.seed, rng.STREAM_SYMBOL, start, stop)
        return np.searchsorted(self._cum, u, side="right").astype(np.int64)

    def value_at(self, n: int) -> UnitValue:
        word = tuple(self.symbol_at(n + j) for j in range(self.bm.l))
        return self.bm.value_of_word(word)

    def _codes(self, start: int, stop: int) -> np.ndarray:
        l, a = self.bm.l, self.bm.n_symbols
        syms = self.symbol_block(start, stop + l - 1)
        codes = np.zeros(stop - start, dtype=np.int64)
        for j in range(l):
            codes = codes * a + syms[j:j + (stop - start)]
        return codes

    def residue_block(self, start: int, stop: int):
        self._check_range(start, stop)
        codes = self._codes(start, stop)
        return self._res[codes].copy(), self._nz[codes].copy()

    def phase_block(self, start: int, stop: int):
        res, nz = self.residue_block(start, stop)
        phases = res.astype(np.float64) / self.bm.m
        phases[~nz] = 0.0
        return phases, nz


def blockmap_source(bm: BlockMap, seed: int = 0) -> BlockMapSource:
    return BlockMapSource(bm, seed)


# ---------------------------------------------------------------------------
# the piecewise-expanding circle example


def piecewise_expanding_map(t):
    """Four-branch interval map with slopes alternating 3/2 and 1/2."""
    t = np.asarray(t, dtype=np.float64)
    out = np.where(t < 0.25, 1.5 * t,
          np.where(t < 0.5, 0.5 * t + 0.25,
          np.where(t < 0.75, 1.5 * t - 0.25, 0.5 * t + 0.5)))
    return out if out.shape else float(out)


class PiecewiseCircleSource(SequenceSource):
    """z(n) = exp(2*pi*i*h(t_n)) for i.i.d. uniform t_n, with h the
    four-branch map above.  Mean zero, but the second moment is not."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.length = None
        self.declared_index = IndexBound.infinite()

    def value_at(self, n: int) -> UnitValue:
        t = rng.uniform01(self.seed, rng.STREAM_VALUE, n)
        return UnitValue(piecewise_expanding_map(t), False)

    def phase_block(self, start: int, stop: int):
        self._check_range(start, stop)
        t = rng.uniform01_block(self.seed, rng.STREAM_VALUE, start, stop)
        return piecewise_expanding_map(t), np.ones(stop - start, dtype=bool)


def piecewise_circle_source(seed: int = 0) -> PiecewiseCircleSource:
    return PiecewiseCircleSource(seed)


# ---------------------------------------------------------------------------
# small deterministic sources


class PeriodicPhaseSource(SequenceSource):
    """z(n) = exp(2*pi*i*(n mod m)/m); m = 2 gives the alternating signs."""

    def __init__(self, m: int = 2, length: Optional[int] = None):
        if m < 2:
            raise ValueError("m must be >= 2")
        self.m = m
        self.length = length
        self.declared_index = IndexBound.finite(m)
        self.root_denominator = m

    def value_at(self, n: int) -> UnitValue:
        return UnitValue.root(n % self.m, self.m)

    def residue_block(self, start: int, stop: int):
        self._check_range(start, stop)
        ks = np.arange(start, stop, dtype=np.int64) % self.m
        return ks, np.ones(stop - start, dtype=bool)

    def phase_block(self, start: int, stop: int):
        ks, nz = self.residue_block(start, stop)
        return ks.astype(np.float64) / self.m, nz


class LinearPhaseSource(SequenceSource):
    """z(n) = exp(2*pi*i*n*alpha), the rigid rotation orbit."""

    def __init__(self, alpha: float, length: Optional[int] = None):
        self.alpha = float(alpha)
        self.length = length
        self.declared_index = IndexBound.infinite()

    def value_at(self, n: int) -> UnitValue:
        return UnitValue((n * self.alpha) % 1.0, False)

    def phase_block(self, start: int, stop: int):
        self._check_range(start, stop)
        ph = np.mod(np.arange(start, stop, dtype=np.float64) * self.alpha, 1.0)
        return ph, np.ones(stop - start, dtype=bool)


class ConstantSource(SequenceSource):
    """z(n) identically equal to one fixed value."""

    def __init__(self, value: UnitValue = UnitValue.one(), length: Optional[int] = None):
        self.value = value
        self.length = length
        if value.is_exact:
            d = value.phase.denominator if not value.is_zero else 1
            self.root_denominator = max(2, d)
            self.declared_index = IndexBound.finite(self.root_denominator)

    def value_at(self, n: int) -> UnitValue:
        return self.value


class ExplicitSource(SequenceSource):
    """Replays a stored list of values (file-backed or test-crafted)."""

    def __init__(self, values: Sequence[UnitValue],
                 declared_index: Optional[IndexBound] = None):
        self._values = list(values)
        self.length = len(self._values)
        self.declared_index = declared_index
        denoms = [1]
        exact = True
        for v in self._values:
            if not v.is_zero:
                if not isinstance(v.phase, Fraction):
                    exact = False
                    break
                denoms.append(v.phase.denominator)
        if exact and self._values:
            self.root_denominator = max(2, reduce(lcm, denoms))
        self._phases = np.array([float(v.phase) for v in self._values], dtype=np.float64)
        self._nonzero = np.array([not v.is_zero for v in self._values], dtype=bool)

    def value_at(self, n: int) -> UnitValue:
        if not 0 <= n < self.length:
            raise OutOfRange(f"index {n} beyond length {self.length}")
        return self._values[n]

    def phase_block(self, start: int, stop: int):
        self._check_range(start, stop)
        return self._phases[start:stop].copy(), self._nonzero[start:stop].copy()


# ---------------------------------------------------------------------------
# file IO


def source_to_csv(src: SequenceSource, n: int, path) -> None:
    """Two columns (phase, is_zero), one row per term, with a header."""
    with open(path, "w") as fh:
        fh.write("phase,is_zero\n")
        for v in src.values(0, n):
            fh.write(f"{float(v.phase):.18f},{'true' if v.is_zero else 'false'}\n")


def _parse_csv_source(path) -> ExplicitSource:
    values = []
    declared_len = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "length=" in line:
                    declared_len = int(line.split("length=")[1])
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and parts[0].lower() in ("phase", "n"):
                continue  # header row
            if len(parts) != 2:
                raise ParseError(lineno, f"expected 2 columns, got {len(parts)}")
            try:
                phase = float(parts[0])
            except ValueError:
                raise ParseError(lineno, f"bad phase {parts[0]!r}") from None
            flag = parts[1].lower()
            if flag in ("true", "1"):
                zero = True
            elif flag in ("false", "0"):
                zero = False
            else:
                raise ParseError(lineno, f"bad zero flag {parts[1]!r}")
            if not zero and not 0.0 <= phase < 1.0:
                raise ParseError(lineno, f"phase {phase} must lie in [0, 1)")
            values.append(UnitValue.zero() if zero else UnitValue(phase))
    if declared_len is not None and declared_len != len(values):
        raise LengthMismatch(f"header declares {declared_len} rows, found {len(values)}")
    return ExplicitSource(values)


def _parse_binary_source(path) -> ExplicitSource:
    with open(path, "rb") as fh:
        magic = fh.read(len(BINARY_MAGIC))
        if magic != BINARY_MAGIC:
            raise ParseError(0, f"bad magic {magic!r}")
        (count,) = struct.unpack("<Q", fh.read(8))
        payload = fh.read()
    rec = np.frombuffer(payload, dtype=[("frac", "<u8"), ("err", "<i2")])
    if len(rec) != count:
        raise LengthMismatch(f"header declares {count} records, found {len(rec)}")
    phases = rec["frac"].astype(np.float64) * 2.0 ** -64
    values = [UnitValue(float(p)) for p in phases]
    return ExplicitSource(values)


def file_source(path, format: str = "auto") -> ExplicitSource:
    """Replay a stored sequence from CSV (phase, is_zero columns) or the
    compact binary phase-stream layout."""
    if format == "auto":
        with open(path, "rb") as fh:
            head = fh.read(len(BINARY_MAGIC))
        format = "binary" if head == BINARY_MAGIC else "csv"
    if format == "csv":
        return _parse_csv_source(path)
    if format == "binary":
        return _parse_binary_source(path)
    raise ValueError(f"unknown format {format!r}")
