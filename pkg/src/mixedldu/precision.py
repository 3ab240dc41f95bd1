"""Two-tier scalar arithmetic: single, double and software double-double.

Double-double values are unevaluated sums ``hi + lo`` of two machine doubles
with ``hi = fl(hi + lo)``.  The error-free transformations below (two-sum,
Veltkamp/Dekker two-product) follow the accurate variants used by the QD
library; they need no hardware fused multiply-add.

Two containers are provided:

* :class:`DoubleDouble` -- an immutable scalar, convenient for tests and
  reporting.
* :class:`DDArray` -- a vectorized array of double-double numbers backed by two
  ``float64`` ndarrays.  It implements enough of the ndarray surface
  (arithmetic, indexing, ``@``, ``.T``) that the solvers can be written once and
  run with either ``np.ndarray`` (double) or ``DDArray`` (double-double) as the
  higher precision.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "ScalarKind",
    "PrecisionPair",
    "DoubleDouble",
    "DDArray",
    "TruncationOverflow",
    "two_sum",
    "quick_two_sum",
    "two_prod",
    "dd_add",
    "dd_mul",
    "truncate",
    "lift",
    "asarray",
    "zeros",
    "to_float64",
    "dot",
    "norm",
    "is_dd",
]

_SPLITTER = 134217729.0  # 2**27 + 1
_SPLIT_THRESH = 6.69692879491417e299  # 2**996


class ScalarKind(enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"
    DOUBLEDOUBLE = "dd"

    @property
    def eps(self) -> float:
        return _EPS[self]

    @property
    def digits(self) -> int:
        return _DIGITS[self]

    @property
    def dtype(self):
        """numpy dtype of the storage; double-double is carried as float64 pairs."""
        return np.float32 if self is ScalarKind.SINGLE else np.float64

    @classmethod
    def parse(cls, label: str) -> "ScalarKind":
        aliases = {
            "f32": cls.SINGLE, "single": cls.SINGLE, "float": cls.SINGLE,
            "f64": cls.DOUBLE, "double": cls.DOUBLE,
            "dd": cls.DOUBLEDOUBLE, "quad": cls.DOUBLEDOUBLE, "quadruple": cls.DOUBLEDOUBLE,
        }
        try:
            return aliases[label.lower()]
        except KeyError:
            raise ValueError(f"unknown scalar kind {label!r}") from None


_EPS = {
    ScalarKind.SINGLE: float(np.finfo(np.float32).eps),
    ScalarKind.DOUBLE: float(np.finfo(np.float64).eps),
    ScalarKind.DOUBLEDOUBLE: 2.0 ** -104,
}
_DIGITS = {ScalarKind.SINGLE: 7, ScalarKind.DOUBLE: 16, ScalarKind.DOUBLEDOUBLE: 32}


@dataclass(frozen=True)
class PrecisionPair:
    lower: ScalarKind
    higher: ScalarKind

    def __post_init__(self):
        if (self.lower, self.higher) not in _VALID_PAIRS:
            raise ValueError(
                f"unsupported precision pair ({self.lower.value}, {self.higher.value}); "
                "use (single, double) or (double, dd)"
            )

    @classmethod
    def parse(cls, label: str) -> "PrecisionPair":
        table = {"f32f64": cls.SINGLE_DOUBLE, "f64dd": cls.DOUBLE_DD}
        try:
            return table[label.lower()]
        except KeyError:
            raise ValueError(f"unknown precision pair {label!r}") from None

    @property
    def label(self) -> str:
        return "f32f64" if self.lower is ScalarKind.SINGLE else "f64dd"


_VALID_PAIRS = {
    (ScalarKind.SINGLE, ScalarKind.DOUBLE),
    (ScalarKind.DOUBLE, ScalarKind.DOUBLEDOUBLE),
}
PrecisionPair.SINGLE_DOUBLE = PrecisionPair(ScalarKind.SINGLE, ScalarKind.DOUBLE)
PrecisionPair.DOUBLE_DD = PrecisionPair(ScalarKind.DOUBLE, ScalarKind.DOUBLEDOUBLE)


# ---------------------------------------------------------------------------
# error-free transformations; work on python floats and on float64 ndarrays
# ---------------------------------------------------------------------------

def two_sum(a, b):
    """Return ``(s, e)`` with ``s = fl(a + b)`` and ``s + e = a + b`` exactly."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def quick_two_sum(a, b):
    """Two-sum assuming ``|a| >= |b|``."""
    s = a + b
    e = b - (s - a)
    return s, e


def _split(a):
    # Veltkamp splitting; rescale near overflow so the product cannot overflow
    if isinstance(a, np.ndarray):
        big = np.abs(a) > _SPLIT_THRESH
        a_s = np.where(big, a * 3.7252902984e-09, a)
        t = _SPLITTER * a_s
        hi = t - (t - a_s)
        lo = a_s - hi
        hi = np.where(big, hi * 268435456.0, hi)
        lo = np.where(big, lo * 268435456.0, lo)
        return hi, lo
    if abs(a) > _SPLIT_THRESH:
        a_s = a * 3.7252902984e-09  # 2**-28
        t = _SPLITTER * a_s
        hi = t - (t - a_s)
        lo = a_s - hi
        return hi * 268435456.0, lo * 268435456.0
    t = _SPLITTER * a
    hi = t - (t - a)
    return hi, a - hi


def two_prod(a, b):
    """Return ``(p, e)`` with ``p = fl(a * b)`` and ``p + e = a * b`` exactly (Dekker)."""
    p = a * b
    a_hi, a_lo = _split(a)
    b_hi, b_lo = _split(b)
    e = ((a_hi * b_hi - p) + a_hi * b_lo + a_lo * b_hi) + a_lo * b_lo
    return p, e


def _add_parts(ah, al, bh, bl):
    s1, s2 = two_sum(ah, bh)
    t1, t2 = two_sum(al, bl)
    s2 = s2 + t1
    s1, s2 = quick_two_sum(s1, s2)
    s2 = s2 + t2
    return quick_two_sum(s1, s2)


def _mul_parts(ah, al, bh, bl):
    p1, p2 = two_prod(ah, bh)
    p2 = p2 + (ah * bl + al * bh)
    return quick_two_sum(p1, p2)


def _div_parts(ah, al, bh, bl):
    # long division with two correction steps (accurate variant)
    q1 = ah / bh
    rh, rl = _sub_parts(ah, al, *_mul_parts(q1, 0.0 * q1, bh, bl))
    q2 = rh / bh
    rh, rl = _sub_parts(rh, rl, *_mul_parts(q2, 0.0 * q2, bh, bl))
    q3 = rh / bh
    q1, q2 = quick_two_sum(q1, q2)
    return _add_parts(q1, q2, q3, 0.0 * q3)


def _sub_parts(ah, al, bh, bl):
    return _add_parts(ah, al, -bh, -bl)


def _sqrt_parts(ah, al):
    # one Newton step on the double estimate: x + (a - x^2) / (2x)
    if isinstance(ah, np.ndarray):
        pos = ah > 0
        safe_h = np.where(pos, ah, 1.0)
        safe_l = np.where(pos, al, 0.0)
        x = np.sqrt(safe_h)
        sh, sl = _mul_parts(x, np.zeros_like(x), x, np.zeros_like(x))
        dh, dl = _sub_parts(safe_h, safe_l, sh, sl)
        corr = dh / (2.0 * x)
        h, l = quick_two_sum(x, corr)
        return np.where(pos, h, np.sqrt(ah)), np.where(pos, l, 0.0)
    if ah <= 0.0:
        return math.sqrt(ah) if ah == 0.0 else math.nan, 0.0
    x = math.sqrt(ah)
    sh, sl = two_prod(x, x)
    dh, dl = _sub_parts(ah, al, sh, sl)
    return quick_two_sum(x, dh / (2.0 * x))


# ---------------------------------------------------------------------------
# scalar double-double
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DoubleDouble:
    """Scalar double-double ``hi + lo``."""

    hi: float
    lo: float = 0.0

    @classmethod
    def from_parts(cls, hi, lo=0.0) -> "DoubleDouble":
        h, l = two_sum(float(hi), float(lo))
        return cls(h, l)

    @classmethod
    def from_fraction(cls, q) -> "DoubleDouble":
        q = Fraction(q)
        hi = float(q)
        lo = float(q - Fraction(hi)) if math.isfinite(hi) else 0.0
        return cls(hi, lo)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.hi) and math.isfinite(self.lo)

    def to_fraction(self) -> Fraction:
        return Fraction(self.hi) + Fraction(self.lo)

    def __float__(self):
        return self.hi

    def _coerce(self, other):
        if isinstance(other, DoubleDouble):
            return other
        if isinstance(other, (int, float, np.floating)):
            return DoubleDouble(float(other), 0.0)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return dd_add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return DoubleDouble(-self.hi, -self.lo)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return dd_add(self, -other)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return dd_mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return _finish(*_div_parts(self.hi, self.lo, other.hi, other.lo))

    def __abs__(self):
        return -self if self.hi < 0 or (self.hi == 0 and self.lo < 0) else self

    def __lt__(self, other):
        other = self._coerce(other)
        return (self.hi, self.lo) < (other.hi, other.lo)

    def sqrt(self) -> "DoubleDouble":
        return _finish(*_sqrt_parts(self.hi, self.lo))

    def __repr__(self):
        return f"DoubleDouble({self.hi!r}, {self.lo!r})"


def _finish(hi, lo) -> DoubleDouble:
    if not (math.isfinite(hi) and math.isfinite(lo)):
        # non-finite flag: keep the double part, force lo to nan only when hi is nan
        return DoubleDouble(hi, 0.0 if math.isinf(hi) else lo)
    return DoubleDouble(hi, lo)


def dd_add(a: DoubleDouble, b: DoubleDouble) -> DoubleDouble:
    """Double-double addition (accurate variant)."""
    return _finish(*_add_parts(a.hi, a.lo, b.hi, b.lo))


def dd_mul(a: DoubleDouble, b: DoubleDouble) -> DoubleDouble:
    """Double-double multiplication via Dekker's two-product."""
    return _finish(*_mul_parts(a.hi, a.lo, b.hi, b.lo))


# ---------------------------------------------------------------------------
# vectorized double-double arrays
# ---------------------------------------------------------------------------

class DDArray:
    """Array of double-double numbers stored as two float64 ndarrays."""

    __slots__ = ("hi", "lo")
    __array_priority__ = 1000  # make ndarray defer to our reflected operators

    def __init__(self, hi, lo=None):
        self.hi = np.asarray(hi, dtype=np.float64)
        self.lo = np.zeros_like(self.hi) if lo is None else np.asarray(lo, dtype=np.float64)

    @classmethod
    def from_float(cls, x) -> "DDArray":
        return cls(np.array(x, dtype=np.float64, copy=True))

    # -- ndarray-like surface -------------------------------------------------
    @property
    def shape(self):
        return self.hi.shape

    @property
    def ndim(self):
        return self.hi.ndim

    @property
    def size(self):
        return self.hi.size

    def __len__(self):
        return len(self.hi)

    @property
    def T(self):
        return DDArray(self.hi.T, self.lo.T)

    def copy(self):
        return DDArray(self.hi.copy(), self.lo.copy())

    def reshape(self, *shape):
        return DDArray(self.hi.reshape(*shape), self.lo.reshape(*shape))

    def __getitem__(self, key):
        return DDArray(self.hi[key], self.lo[key])

    def __setitem__(self, key, value):
        value = _as_dd(value)
        self.hi[key] = value.hi
        self.lo[key] = value.lo

    def astype_float(self):
        return self.hi.copy()

    def __float__(self):
        return float(self.hi)

    def item(self) -> DoubleDouble:
        return DoubleDouble(float(self.hi), float(self.lo))

    def __repr__(self):
        return f"DDArray(hi={self.hi!r}, lo={self.lo!r})"

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        o = _as_dd(other)
        h, l = _add_parts(*np.broadcast_arrays(self.hi, self.lo, o.hi, o.lo))
        return DDArray(h, l)

    __radd__ = __add__

    def __sub__(self, other):
        o = _as_dd(other)
        h, l = _add_parts(*np.broadcast_arrays(self.hi, self.lo, -o.hi, -o.lo))
        return DDArray(h, l)

    def __rsub__(self, other):
        return _as_dd(other) - self

    def __neg__(self):
        return DDArray(-self.hi, -self.lo)

    def __mul__(self, other):
        o = _as_dd(other)
        h, l = _mul_parts(*np.broadcast_arrays(self.hi, self.lo, o.hi, o.lo))
        return DDArray(h, l)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _as_dd(other)
        h, l = _div_parts(*np.broadcast_arrays(self.hi, self.lo, o.hi, o.lo))
        return DDArray(h, l)

    def __rtruediv__(self, other):
        return _as_dd(other) / self

    def __abs__(self):
        neg = (self.hi < 0) | ((self.hi == 0) & (self.lo < 0))
        return DDArray(np.where(neg, -self.hi, self.hi), np.where(neg, -self.lo, self.lo))

    def sqrt(self):
        h, l = _sqrt_parts(self.hi, self.lo)
        return DDArray(h, l)

    def __matmul__(self, other):
        return _dd_matmul(self, _as_dd(other))

    def __rmatmul__(self, other):
        return _dd_matmul(_as_dd(other), self)

    def sum(self, axis=None):
        if axis is None:
            return _tree_sum(self.reshape(-1), 0)
        return _tree_sum(self, axis)


def _as_dd(x) -> DDArray:
    if isinstance(x, DDArray):
        return x
    if isinstance(x, DoubleDouble):
        return DDArray(np.float64(x.hi), np.float64(x.lo))
    return DDArray(np.asarray(x, dtype=np.float64))


def _tree_sum(x: DDArray, axis: int) -> DDArray:
    hi = np.moveaxis(x.hi, axis, 0)
    lo = np.moveaxis(x.lo, axis, 0)
    if hi.shape[0] == 0:
        return DDArray(np.zeros(hi.shape[1:]), np.zeros(hi.shape[1:]))
    while hi.shape[0] > 1:
        n = hi.shape[0]
        half = n // 2
        h, l = _add_parts(hi[:half], lo[:half], hi[half:2 * half], lo[half:2 * half])
        if n % 2:
            h = np.concatenate([h, hi[-1:]])
            l = np.concatenate([l, lo[-1:]])
        hi, lo = h, l
    return DDArray(hi[0], lo[0])


_MATMUL_CHUNK = 1 << 21


def _dd_matmul(a: DDArray, b: DDArray) -> DDArray:
    vec_a, vec_b = a.ndim == 1, b.ndim == 1
    if vec_a:
        a = a.reshape(1, -1)
    if vec_b:
        b = b.reshape(-1, 1)
    n, k = a.shape
    k2, m = b.shape
    if k != k2:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out_h = np.zeros((n, m))
    out_l = np.zeros((n, m))
    step = max(1, _MATMUL_CHUNK // max(1, n * m))
    for s in range(0, k, step):
        e = min(k, s + step)
        ph, pl = _mul_parts(
            *np.broadcast_arrays(a.hi[:, s:e, None], a.lo[:, s:e, None],
                                 b.hi[None, s:e, :], b.lo[None, s:e, :])
        )
        part = _tree_sum(DDArray(ph, pl), 1)
        out_h, out_l = _add_parts(out_h, out_l, part.hi, part.lo)
    out = DDArray(out_h, out_l)
    if vec_a and vec_b:
        return out.reshape(())
    if vec_a:
        return out.reshape(-1)
    if vec_b:
        return out.reshape(-1)
    return out


# ---------------------------------------------------------------------------
# backend helpers: the same solver code runs on ndarray or DDArray
# ---------------------------------------------------------------------------

def is_dd(x) -> bool:
    return isinstance(x, DDArray)


def asarray(x, kind: ScalarKind):
    """Represent ``x`` in the storage of ``kind`` (exact for widening conversions)."""
    if kind is ScalarKind.DOUBLEDOUBLE:
        return x.copy() if isinstance(x, DDArray) else DDArray.from_float(x)
    if isinstance(x, DDArray):
        return np.asarray(x.hi + x.lo, dtype=kind.dtype)
    return np.array(x, dtype=kind.dtype, copy=True)


def zeros(shape, kind: ScalarKind):
    if kind is ScalarKind.DOUBLEDOUBLE:
        return DDArray(np.zeros(shape), np.zeros(shape))
    return np.zeros(shape, dtype=kind.dtype)


def to_float64(x) -> np.ndarray:
    if isinstance(x, DDArray):
        return x.hi + x.lo
    return np.asarray(x, dtype=np.float64)


def kind_of(x) -> ScalarKind:
    if isinstance(x, DDArray):
        return ScalarKind.DOUBLEDOUBLE
    return ScalarKind.SINGLE if np.asarray(x).dtype == np.float32 else ScalarKind.DOUBLE


def dot(x, y):
    """Inner product of two vectors, or ``X.T @ Y`` for column blocks."""
    return x.T @ y


def norm(x) -> float:
    """Euclidean norm (per column for 2-D input) as float64."""
    if isinstance(x, DDArray):
        sq = (x * x).sum(axis=0)
        return np.sqrt(to_float64(sq))
    return np.linalg.norm(x, axis=0)


def max_abs(x) -> float:
    if isinstance(x, DDArray):
        return float(np.max(np.abs(x.hi))) if x.size else 0.0
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


class TruncationOverflow(RuntimeWarning):
    """Raised as a warning when truncation saturates out-of-range values."""


def truncate(x, target: ScalarKind, *, return_flag: bool = False):
    """Round higher-precision data to ``target`` (round to nearest).

    Values beyond the target range saturate to the largest finite value of the
    same sign; the event is reported through ``return_flag`` or a
    :class:`TruncationOverflow` warning.
    """
    if target is ScalarKind.DOUBLEDOUBLE:
        raise ValueError("double-double is never a lower precision")
    if isinstance(x, DoubleDouble):
        x = DDArray(np.float64(x.hi), np.float64(x.lo))
    if isinstance(x, DDArray):
        # hi is already round(hi + lo); to single, round the exact sum once
        if target is ScalarKind.DOUBLE:
            src = x.hi.copy()
        else:
            src = _dd_to_single(x)
    else:
        src = np.asarray(x, dtype=np.float64)
    fmax = float(np.finfo(target.dtype).max)
    over = np.abs(src) > fmax
    flag = bool(np.any(over & np.isfinite(src)))
    with np.errstate(over="ignore"):
        out = np.where(over, np.sign(src) * fmax, src).astype(target.dtype)
    if np.ndim(out) == 0:
        out = target.dtype(out)
    if return_flag:
        return out, flag
    if flag:
        warnings.warn("truncation saturated values outside the lower-precision range",
                      TruncationOverflow, stacklevel=2)
    return out


def _dd_to_single(x: DDArray) -> np.ndarray:
    # hi -> single is already correctly rounded unless hi sits exactly on a
    # midpoint between two singles; then the sign of lo decides the tie
    h32 = x.hi.astype(np.float32)
    d = x.hi - h32.astype(np.float64)  # exact
    up_gap = np.nextafter(h32, np.float32(np.inf)).astype(np.float64) - h32
    down_gap = h32.astype(np.float64) - np.nextafter(h32, np.float32(-np.inf))
    up = (d > 0) & (d == up_gap / 2) & (x.lo > 0)
    down = (d < 0) & (-d == down_gap / 2) & (x.lo < 0)
    h32 = np.where(up, np.nextafter(h32, np.float32(np.inf)), h32)
    h32 = np.where(down, np.nextafter(h32, np.float32(-np.inf)), h32)
    return h32.astype(np.float64)


def lift(x, target: ScalarKind = ScalarKind.DOUBLE):
    """Exactly embed lower-precision data into ``target``."""
    if isinstance(x, DoubleDouble):
        return x
    if target is ScalarKind.DOUBLEDOUBLE:
        if np.ndim(x) == 0:
            return DoubleDouble(float(x), 0.0)
        return DDArray(np.asarray(x, dtype=np.float64))
    arr = np.asarray(x, dtype=np.float64)
    return np.float64(arr) if arr.ndim == 0 else arr
