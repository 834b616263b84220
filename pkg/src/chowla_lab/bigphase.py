"""Guaranteed-precision fractional parts of beta**n * g(beta).

The engine iterates x_{n+1} = beta * x_n in integer fixed point with
``total_bits`` fractional bits, truncating once per step, and carries an exact
integer upper bound on the accumulated error (in units of 2**-total_bits).
Emission stops with :class:`PrecisionExhausted` as soon as the bound crosses
2**(-guard_bits + 2), so every emitted term is certified.

Two state representations are used:

* exact rational beta = p/q: the state is kept modulo q.  Dropping integer
  multiples of q never changes any later fractional part (beta * q*k = p*k is
  an integer), so the state stays q * 2**total_bits bounded and each step is
  a small-by-large integer multiply.
* inexact beta (e.g. algebraic numbers evaluated to the budget): the full
  integer part is carried, and beta itself is held with extra fractional bits
  so its representation error stays below the truncation noise.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from math import isqrt
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import ChowlaLabError
from . import rng

FLOAT_VIEW_ERR = 2.0 ** -53  # quantization of the float view of a frac


class PrecisionExhausted(ChowlaLabError):
    """The error bound crossed the emission threshold before n_max."""

    def __init__(self, n: int, message: str = ""):
        self.n = n
        super().__init__(message or f"error bound exceeded at term {n}; raise the budget")


class GVanishes(ChowlaLabError):
    """g came within 2**-30 of zero on the check grid."""


def required_precision(beta_upper: float, n_max: int, guard_bits: int) -> int:
    """Fractional bits needed so the n_max-th term keeps guard_bits of accuracy.

    The per-step error recurrence eps' <= beta*eps + 2**-total_bits forces
    total precision linear in n_max * log2(beta).
    """
    if beta_upper <= 1:
        raise ValueError("beta_upper must exceed 1")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if guard_bits < 16:
        raise ValueError("guard_bits must be >= 16")
    return math.ceil(n_max * math.log2(beta_upper)) + guard_bits


@dataclass(frozen=True)
class PrecisionBudget:
    """Fixed-point budget for a phase stream."""

    total_bits: int
    guard_bits: int
    n_max: int
    beta_upper: float

    def __post_init__(self) -> None:
        need = math.ceil(self.n_max * math.log2(self.beta_upper)) + self.guard_bits
        if self.total_bits < need:
            raise ValueError(
                f"total_bits {self.total_bits} below required {need} "
                f"(n_max={self.n_max}, beta_upper={self.beta_upper}, guard={self.guard_bits})"
            )

    @classmethod
    def for_stream(cls, beta_upper: float, n_max: int, guard_bits: int = 64) -> "PrecisionBudget":
        return cls(required_precision(beta_upper, n_max, guard_bits), guard_bits, n_max, beta_upper)


# ---------------------------------------------------------------------------
# beta representations


@dataclass(frozen=True)
class BetaValue:
    """A real beta > 1, exact rational or a floored dyadic approximation.

    For the inexact form, ``scaled / 2**frac_bits`` is a lower bound for beta
    and the true value is at most ``err_ulps`` units of 2**-frac_bits above.
    """

    exact: Optional[Fraction] = None
    scaled: Optional[int] = None
    frac_bits: Optional[int] = None
    err_ulps: int = 0

    def __post_init__(self) -> None:
        if (self.exact is None) == (self.scaled is None):
            raise ValueError("exactly one of exact / scaled must be given")
        if self.as_float() <= 1.0:
            raise ValueError("beta must exceed 1")

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    def as_float(self) -> float:
        if self.exact is not None:
            return self.exact.numerator / self.exact.denominator
        return math.ldexp(float(self.scaled >> max(0, self.frac_bits - 53)),
                          max(0, self.frac_bits - 53) - self.frac_bits)

    def upper_float(self) -> float:
        """A float certainly >= beta (for budget formulas)."""
        return self.as_float() * (1 + 2.0 ** -40)

    @classmethod
    def from_fraction(cls, fr: Fraction) -> "BetaValue":
        return cls(exact=Fraction(fr))

    @classmethod
    def from_float(cls, x: float) -> "BetaValue":
        return cls(exact=Fraction(x))

    @classmethod
    def random_dyadic(cls, seed: int, bits: int, lo: float, hi: float, index: int = 0) -> "BetaValue":
        """Uniform dyadic with ``bits`` fractional bits in (lo, hi).

        A high-entropy dyadic stands in for a typical real: the exceptional
        sets of the almost-everywhere statements are null.
        """
        if not 1.0 < lo < hi:
            raise ValueError("need 1 < lo < hi")
        u = 0
        words = (bits + 63) // 64
        for w in range(words):
            u = (u << 64) | rng.hash_u64(seed, rng.STREAM_BETA, index * words + w)
        u &= (1 << bits) - 1
        span = Fraction(hi) - Fraction(lo)
        val = Fraction(lo) + Fraction(u, 1 << bits) * span
        # floor to the dyadic grid so the value is exactly representable
        num = (val.numerator << bits) // val.denominator
        return cls(exact=Fraction(num, 1 << bits))

    @classmethod
    def sqrt_rational(cls, d: Fraction, bits: int,
                      mul: Fraction = Fraction(1), add: Fraction = Fraction(0)) -> "BetaValue":
        """add + mul * sqrt(d) floored to ``bits`` fractional bits."""
        d = Fraction(d)
        if d < 0:
            raise ValueError("d must be non-negative")
        # sqrt(a/b) = sqrt(a*b) / b, floored at scale 2**bits
        a, b = d.numerator, d.denominator
        root = isqrt(a * b << (2 * bits)) // b
        val = (add.numerator << bits) // add.denominator \
            + (mul.numerator * root) // mul.denominator
        return cls(scaled=val, frac_bits=bits, err_ulps=4)

    @classmethod
    def golden(cls, bits: int) -> "BetaValue":
        """(1 + sqrt 5) / 2 floored to ``bits`` fractional bits."""
        root5 = isqrt(5 << (2 * bits))
        return cls(scaled=(root5 + (1 << bits)) >> 1, frac_bits=bits, err_ulps=2)


# ---------------------------------------------------------------------------
# g functions


class GFunc:
    """A C^2 multiplier g, evaluable exactly on rationals and via floats for
    the derivative diagnostics."""

    name = "g"

    def at(self, x: float) -> float:
        raise NotImplementedError

    def d1(self, x: float) -> float:
        raise NotImplementedError

    def d2(self, x: float) -> float:
        raise NotImplementedError

    def value_exact(self, beta: Fraction) -> Fraction:
        raise NotImplementedError

    def deriv_bound(self, x_hi: float) -> float:
        """Crude bound for |g'| on (1, x_hi], used to absorb beta rounding."""
        return abs(self.d1(x_hi)) + abs(self.d1(1.0 + (x_hi - 1.0) / 2)) + 1.0


class GOne(GFunc):
    """g identically one."""

    name = "one"

    def at(self, x: float) -> float:
        return 1.0

    def d1(self, x: float) -> float:
        return 0.0

    def d2(self, x: float) -> float:
        return 0.0

    def value_exact(self, beta: Fraction) -> Fraction:
        return Fraction(1)


class GPoly(GFunc):
    """Polynomial with rational coefficients, ascending order."""

    def __init__(self, coeffs: Sequence):
        self.coeffs = tuple(Fraction(c) for c in coeffs)
        if not self.coeffs:
            raise ValueError("need at least one coefficient")
        self.name = "poly(" + ",".join(str(c) for c in self.coeffs) + ")"

    def _eval(self, x, coeffs):
        v = 0
        for c in reversed(coeffs):
            v = v * x + c
        return v

    def at(self, x: float) -> float:
        return float(self._eval(x, [float(c) for c in self.coeffs]))

    def d1(self, x: float) -> float:
        d = [i * float(c) for i, c in enumerate(self.coeffs)][1:]
        return float(self._eval(x, d)) if d else 0.0

    def d2(self, x: float) -> float:
        d = [i * (i - 1) * float(c) for i, c in enumerate(self.coeffs)][2:]
        return float(self._eval(x, d)) if d else 0.0

    def value_exact(self, beta: Fraction) -> Fraction:
        return self._eval(beta, self.coeffs)


class GPowerProduct(GFunc):
    """alpha * x**k with rational alpha."""

    def __init__(self, alpha, k: int):
        self.alpha = Fraction(alpha)
        self.k = int(k)
        if self.k < 0:
            raise ValueError("k must be >= 0")
        self.name = f"power({self.alpha}*x^{self.k})"

    def at(self, x: float) -> float:
        return float(self.alpha) * x ** self.k

    def d1(self, x: float) -> float:
        return float(self.alpha) * self.k * x ** (self.k - 1) if self.k else 0.0

    def d2(self, x: float) -> float:
        k = self.k
        return float(self.alpha) * k * (k - 1) * x ** (k - 2) if k >= 2 else 0.0

    def value_exact(self, beta: Fraction) -> Fraction:
        return self.alpha * beta ** self.k


class GCallable(GFunc):
    """User-supplied g: an exact rational evaluator plus float derivatives."""

    def __init__(self, fn: Callable[[Fraction], Fraction],
                 d1: Callable[[float], float], d2: Callable[[float], float],
                 name: str = "user"):
        self._fn = fn
        self._d1 = d1
        self._d2 = d2
        self.name = name

    def at(self, x: float) -> float:
        return float(self._fn(Fraction(x)))

    def d1(self, x: float) -> float:
        return self._d1(x)

    def d2(self, x: float) -> float:
        return self._d2(x)

    def value_exact(self, beta: Fraction) -> Fraction:
        return Fraction(self._fn(beta))


# ---------------------------------------------------------------------------
# the stream engine


def _frac_to_float(v: int, fbits: int) -> float:
    """Float view of a fbits-bit fractional fixed point, truncated to 53 bits."""
    s = max(fbits - 53, 0)
    return math.ldexp(v >> s, s - fbits)


def _log2_upper(u: int) -> float:
    """A float certainly >= log2(u), tight to ~2**-50; -inf for u = 0."""
    if u <= 0:
        return float("-inf")
    bl = u.bit_length()
    if bl <= 53:
        return math.log2(u) + 1e-13
    mant = (u >> (bl - 53)) + 1
    return math.log2(mant) + (bl - 53) + 1e-13


class PhaseStream:
    """frac(beta**n * g(beta)) for n in [0, n_max) with certified error bounds.

    ``fracs`` is the float64 view (quantization FLOAT_VIEW_ERR on top of the
    reported bound); ``err_log2[n]`` bounds log2 of the fixed-point error.
    With ``keep_exact`` the full fixed-point fracs and exact integer error
    units are retained for oracle comparisons.
    """

    def __init__(self, beta: BetaValue, gfunc: GFunc, n_max: int,
                 guard_bits: int = 64, total_bits: Optional[int] = None,
                 keep_exact: bool = False):
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        if guard_bits < 4:
            raise ValueError("guard_bits must be >= 4")
        self.beta = beta
        self.gfunc = gfunc
        self.n_max = n_max
        self.guard_bits = guard_bits
        bu = beta.upper_float()
        if total_bits is None:
            total_bits = math.ceil(n_max * math.log2(bu)) + guard_bits
        self.total_bits = total_bits
        self.keep_exact = keep_exact
        self.fracs = np.empty(n_max, dtype=np.float64)
        self.err_log2 = np.empty(n_max, dtype=np.float64)
        self.frac_fixed: List[int] = []
        self.err_units: List[int] = []
        self._run()

    def _run(self) -> None:
        F = self.total_bits
        fmask = (1 << F) - 1
        threshold = 1 << (F - self.guard_bits + 2) if F - self.guard_bits + 2 >= 0 else 0

        if self.beta.is_exact:
            p = self.beta.exact.numerator
            q = self.beta.exact.denominator
            qb = q.bit_length() - 1
            q_pow2 = (q == 1 << qb)
            state_mod = q << F
            g0 = self.gfunc.value_exact(self.beta.exact) % q
            v = (g0.numerator << F) // g0.denominator
            u = 0 if (g0.numerator << F) % g0.denominator == 0 else 1
            for n in range(self.n_max):
                if u > threshold:
                    raise PrecisionExhausted(n)
                self._emit(n, v & fmask, u, F)
                if q_pow2:
                    v = ((v * p) >> qb) & (state_mod - 1)
                else:
                    v = ((v * p) // q) % state_mod
                u = (u * p + q - 1) // q + 1
        else:
            fb = self.beta.frac_bits
            B = self.beta.scaled
            eb = self.beta.err_ulps
            if fb < F:
                raise ValueError("beta must carry at least total_bits fractional bits")
            # g evaluated exactly at the dyadic approximation of beta; the
            # approximation gap is absorbed through a derivative bound
            beta_apx = Fraction(B, 1 << fb)
            g0 = self.gfunc.value_exact(beta_apx)
            v = (g0.numerator << F) // g0.denominator
            gd = self.gfunc.deriv_bound(self.beta.upper_float())
            u = 2 + math.ceil(abs(gd) * eb * 2.0 ** (F - fb))
            half = (1 << fb) - 1
            for n in range(self.n_max):
                if u > threshold:
                    raise PrecisionExhausted(n)
                self._emit(n, v % (1 << F), u, F)
                v_prev = abs(v)
                v = (v * B) >> fb
                # eps' <= beta_up * eps + |state| * delta_beta + truncation
                u = ((u * (B + eb) + half) >> fb) \
                    + ((v_prev * eb + half) >> fb) + 2

    def _emit(self, n: int, frac_fixed: int, u: int, F: int) -> None:
        self.fracs[n] = _frac_to_float(frac_fixed, F)
        self.err_log2[n] = _log2_upper(u) - F
        if self.keep_exact:
            self.frac_fixed.append(frac_fixed)
            self.err_units.append(u)

    def __len__(self) -> int:
        return self.n_max

    @property
    def values(self) -> List[Tuple[float, float]]:
        """(frac, err_bound) pairs; err_bound refers to the fixed-point value."""
        return [(float(f), float(2.0 ** e)) for f, e in zip(self.fracs, self.err_log2)]

    def err_bound(self, n: int) -> Fraction:
        """Exact error bound at term n (requires keep_exact)."""
        if not self.keep_exact:
            raise ChowlaLabError("stream was built without keep_exact")
        return Fraction(self.err_units[n], 1 << self.total_bits)

    def frac_exact(self, n: int) -> Fraction:
        if not self.keep_exact:
            raise ChowlaLabError("stream was built without keep_exact")
        return Fraction(self.frac_fixed[n], 1 << self.total_bits)

    def max_phase_error(self) -> float:
        """Worst emitted bound plus the float-view quantization."""
        worst = float(np.max(self.err_log2)) if self.n_max else float("-inf")
        return 2.0 ** worst + FLOAT_VIEW_ERR


def phase_stream(beta: BetaValue, gfunc: GFunc, n_max: int,
                 guard_bits: int = 64, total_bits: Optional[int] = None,
                 keep_exact: bool = False) -> PhaseStream:
    """Build a certified stream of frac(beta**n * g(beta)), n < n_max."""
    return PhaseStream(beta, gfunc, n_max, guard_bits, total_bits, keep_exact)


def stream_with_retry(beta: BetaValue, gfunc: GFunc, n_max: int,
                      guard_bits: int = 64, max_retries: int = 3) -> PhaseStream:
    """Build a stream, raising the budget on PrecisionExhausted.

    beta values close to 1 accumulate error faster than the generic budget
    formula allows for (the constant is 1/(beta-1)); each retry adds 32 bits.
    """
    extra = 0
    for _ in range(max_retries + 1):
        try:
            bu = beta.upper_float()
            total = math.ceil(n_max * math.log2(bu)) + guard_bits + extra
            return PhaseStream(beta, gfunc, n_max, guard_bits, total)
        except PrecisionExhausted:
            extra += 32
    raise PrecisionExhausted(0, "budget retries exhausted")


# ---------------------------------------------------------------------------
# Koksma hypothesis diagnostics (numeric evidence on a grid, not a proof)


@dataclass
class KoksmaReport:
    """Grid evidence for the two derivative hypotheses on f_n(x) = x^n g(x)."""

    interval: Tuple[float, float]
    grid_points: int
    pairs_tested: int
    min_abs_deriv_gap: float          # min over pairs/grid of |(f_m - f_n)'|
    min_gap_pair: Tuple[int, int]
    min_gap_x: float
    monotone_all: bool                # (f_m' - f_n')' kept one sign everywhere
    nonmonotone_pairs: list = field(default_factory=list)
    m_star_direct: Optional[int] = None   # smallest M: all tested pairs >= M pass directly
    m_star_bounds: Optional[int] = None   # smallest m making both analytic lower bounds positive
    note: str = "numeric evidence on a finite grid, not a proof"


def koksma_check(g: GFunc, interval: Tuple[float, float], m_start: int = 1,
                 pair_budget: int = 8, grid_points: int = 257) -> KoksmaReport:
    """Evaluate the monotonicity / separation hypotheses for x**n * g(x).

    Checks every pair (m, n), m_start <= n < m <= m_start + pair_budget, on a
    uniform grid over the interval, and also reports the smallest index at
    which the closed-form lower bounds
    m(x-1)/x^2 - |g'/g| and m(m-1)(x-1)/x^3 - (2m/x)|g'/g| - |g''/g|
    are positive across the grid.
    """
    a, b = interval
    if not 1.0 < a < b:
        raise ValueError("interval must satisfy 1 < a < b")
    xs = np.linspace(a, b, grid_points)
    gv = np.array([g.at(x) for x in xs])
    if np.min(np.abs(gv)) < 2.0 ** -30:
        raise GVanishes(f"|g| < 2^-30 on the grid of [{a}, {b}]")
    g1 = np.array([g.d1(x) for x in xs])
    g2 = np.array([g.d2(x) for x in xs])
    r1 = np.abs(g1 / gv)
    r2 = np.abs(g2 / gv)

    def d_gap(m: int, n: int) -> np.ndarray:
        return (m * xs ** (m - 1) - n * xs ** (n - 1)) * gv + (xs ** m - xs ** n) * g1

    def d2_gap(m: int, n: int) -> np.ndarray:
        return ((m * (m - 1) * xs ** (m - 2) - n * (n - 1) * xs ** (n - 2)) * gv
                + 2 * (m * xs ** (m - 1) - n * xs ** (n - 1)) * g1
                + (xs ** m - xs ** n) * g2)

    pairs = [(m, n) for m in range(m_start, m_start + pair_budget + 1)
             for n in range(m_start, m)]
    min_gap = float("inf")
    min_pair = (0, 0)
    min_x = float("nan")
    nonmono = []
    pair_ok_from = {}
    for m, n in pairs:
        d1v = np.abs(d_gap(m, n))
        i = int(np.argmin(d1v))
        if d1v[i] < min_gap:
            min_gap = float(d1v[i])
            min_pair = (m, n)
            min_x = float(xs[i])
        d2v = d2_gap(m, n)
        mono = bool(np.all(d2v > 0) or np.all(d2v < 0))
        if not mono:
            nonmono.append((m, n))
        pair_ok_from[(m, n)] = mono and float(d1v[i]) > 0

    m_star_direct = None
    for M in range(m_start, m_start + pair_budget + 1):
        if all(ok for (m, n), ok in pair_ok_from.items() if n >= M):
            m_star_direct = M
            break

    m_star_bounds = None
    lo_factor1 = np.min((xs - 1) / xs ** 2)
    lo_factor2 = np.min((xs - 1) / xs ** 3)
    for m in range(1, 1_000_000):
        b1 = m * lo_factor1 - np.max(r1)
        b2 = m * (m - 1) * lo_factor2 - np.max((2 * m / xs) * r1 + r2)
        if b1 > 0 and b2 > 0:
            m_star_bounds = m
            break

    return KoksmaReport(
        interval=(a, b), grid_points=grid_points, pairs_tested=len(pairs),
        min_abs_deriv_gap=min_gap, min_gap_pair=min_pair, min_gap_x=min_x,
        monotone_all=not nonmono, nonmonotone_pairs=nonmono,
        m_star_direct=m_star_direct, m_star_bounds=m_star_bounds,
    )


# ---------------------------------------------------------------------------
# exports

BINARY_MAGIC = b"CHLPHS01"


def stream_to_csv(stream: PhaseStream, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "frac", "err_bound"])
        for n in range(stream.n_max):
            w.writerow([n, format(float(stream.fracs[n]), ".18f"),
                        format(float(2.0 ** stream.err_log2[n]), ".6e")])


def stream_to_binary(stream: PhaseStream, path) -> None:
    """Compact layout: magic, uint64 count, then per term a 64-bit
    little-endian fixed-point frac and a 16-bit log2 error exponent."""
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Q", stream.n_max))
        frac64 = np.minimum(np.floor(stream.fracs * 2.0 ** 64), 2.0 ** 64 - 1).astype(np.uint64)
        errlog = np.ceil(np.maximum(stream.err_log2, -32768)).astype(np.int16)
        rec = np.zeros(stream.n_max, dtype=[("frac", "<u8"), ("err", "<i2")])
        rec["frac"] = frac64
        rec["err"] = errlog
        fh.write(rec.tobytes())
