from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixedldu.precision import (DDArray, DoubleDouble, PrecisionPair, ScalarKind,
                                TruncationOverflow, asarray, dd_add, dd_mul, lift, norm,
                                to_float64, truncate, two_prod, two_sum)

EPS_DD = ScalarKind.DOUBLEDOUBLE.eps

finite = st.floats(min_value=-1e30, max_value=1e30, allow_nan=False, allow_infinity=False)


def dd_from(h, lo_scale):
    hi = float(h)
    return DoubleDouble.from_parts(hi, hi * lo_scale * EPS_DD)


def rel_err(got: DoubleDouble, exact: Fraction) -> float:
    if exact == 0:
        return abs(float(got.to_fraction()))
    return abs(float((got.to_fraction() - exact) / exact))


def test_eps_ordering_and_values():
    s, d, q = (k.eps for k in ScalarKind)
    assert s > d > q
    assert s == pytest.approx(1.19e-7, rel=1e-2)
    assert d == pytest.approx(2.22e-16, rel=1e-2)
    assert q == pytest.approx(4.93e-32, rel=1e-2)


def test_only_two_pairs_are_valid():
    assert PrecisionPair.parse("f32f64") == PrecisionPair.SINGLE_DOUBLE
    assert PrecisionPair.parse("f64dd") == PrecisionPair.DOUBLE_DD
    with pytest.raises(ValueError):
        PrecisionPair(ScalarKind.SINGLE, ScalarKind.DOUBLEDOUBLE)
    with pytest.raises(ValueError):
        PrecisionPair(ScalarKind.DOUBLE, ScalarKind.SINGLE)


@given(finite, finite)
def test_error_free_transformations(a, b):
    s, e = two_sum(a, b)
    assert Fraction(s) + Fraction(e) == Fraction(a) + Fraction(b)
    if a == 0 or b == 0 or 1e-290 < abs(a * b) < 1e300:
        p, e = two_prod(a, b)
        assert Fraction(p) + Fraction(e) == Fraction(a) * Fraction(b)


def test_add_examples():
    x = DoubleDouble.from_parts(3.0, 1e-17)
    z = dd_add(DoubleDouble(0.0, 0.0), x)
    assert (z.hi, z.lo) == (x.hi, x.lo)
    z = dd_add(DoubleDouble(1.0, 0.0), DoubleDouble(2.0 ** -60, 0.0))
    assert (z.hi, z.lo) == (1.0, 2.0 ** -60)
    z = dd_add(DoubleDouble(1.0, 0.0), DoubleDouble(-1.0, 0.0))
    assert (z.hi, z.lo) == (0.0, 0.0)


def test_mul_examples():
    x = DoubleDouble.from_parts(3.0, 1e-17)
    z = dd_mul(DoubleDouble(1.0, 0.0), x)
    assert (z.hi, z.lo) == (x.hi, x.lo)
    z = dd_mul(DoubleDouble(2.0, 0.0), DoubleDouble(0.5, 0.0))
    assert (z.hi, z.lo) == (1.0, 0.0)
    a = DoubleDouble(1.0 + 2.0 ** -30, 0.0)
    exact = a.to_fraction() ** 2
    assert rel_err(dd_mul(a, a), exact) <= 8 * EPS_DD


def test_normalization_invariant():
    z = dd_add(DoubleDouble.from_parts(1.0, 1e-20), DoubleDouble.from_parts(1e-3, 3e-21))
    assert z.hi == z.hi + z.lo
    assert abs(z.lo) <= np.spacing(z.hi) / 2


@settings(max_examples=300)
@given(finite, st.floats(-1, 1), finite, st.floats(-1, 1))
def test_dd_ops_against_rationals(a, la, b, lb):
    x, y = dd_from(a, la), dd_from(b, lb)
    fx, fy = x.to_fraction(), y.to_fraction()
    s = fx + fy
    if s != 0 and abs(float(s)) > 1e-280:
        # bound relative to the larger operand covers cancellation
        err = abs(float(dd_add(x, y).to_fraction() - s))
        assert err <= 8 * EPS_DD * max(abs(float(fx)), abs(float(fy)))
    p = fx * fy
    if p != 0 and 1e-250 < abs(float(p)) < 1e250:
        assert rel_err(dd_mul(x, y), p) <= 8 * EPS_DD


def test_vectorized_ops_match_scalar(rng):
    a = DDArray(rng.standard_normal(50), rng.standard_normal(50) * 1e-17)
    b = DDArray(rng.standard_normal(50), rng.standard_normal(50) * 1e-17)
    s, p = a + b, a * b
    for i in range(50):
        xs = dd_add(a[i].item(), b[i].item())
        xp = dd_mul(a[i].item(), b[i].item())
        assert (s.hi[i], s.lo[i]) == (xs.hi, xs.lo)
        assert (p.hi[i], p.lo[i]) == (xp.hi, xp.lo)


def test_division_and_sqrt_accuracy(rng):
    for _ in range(50):
        a = DoubleDouble(float(rng.uniform(0.1, 10)), 0.0)
        b = DoubleDouble(float(rng.uniform(0.1, 10)), 0.0)
        assert rel_err(a / b, a.to_fraction() / b.to_fraction()) <= 8 * EPS_DD
        r = a.sqrt().to_fraction()
        assert abs(float((r * r - a.to_fraction()) / a.to_fraction())) <= 16 * EPS_DD


def test_matmul_against_rational_oracle(rng):
    A = DDArray(rng.standard_normal((6, 9)))
    x = DDArray(rng.standard_normal(9), rng.standard_normal(9) * 1e-17)
    y = A @ x
    for i in range(6):
        exact = sum(Fraction(A.hi[i, j]) * (Fraction(x.hi[j]) + Fraction(x.lo[j]))
                    for j in range(9))
        scale = sum(abs(Fraction(A.hi[i, j])) * abs(Fraction(x.hi[j])) for j in range(9))
        got = Fraction(y.hi[i]) + Fraction(y.lo[i])
        assert abs(float((got - exact) / scale)) <= 32 * EPS_DD


def test_truncate_examples():
    assert truncate(1.0, ScalarKind.SINGLE) == np.float32(1.0)
    t = truncate(np.pi, ScalarKind.SINGLE)
    assert t.dtype == np.float32
    assert abs(float(t) - np.pi) / np.pi <= 1.2e-7
    out, flag = truncate(1e39, ScalarKind.SINGLE, return_flag=True)
    assert flag and out == np.finfo(np.float32).max
    with pytest.warns(TruncationOverflow):
        truncate(np.array([-1e39, 1.0]), ScalarKind.SINGLE)
    out, flag = truncate(np.array([1.0, 2.0]), ScalarKind.SINGLE, return_flag=True)
    assert not flag


def test_truncate_double_double_rounds_once():
    # hi exactly halfway between two singles, lo breaks the tie upwards
    half = 1.0 + 2.0 ** -24
    x = DDArray(np.array([half]), np.array([2.0 ** -80]))
    assert truncate(x, ScalarKind.SINGLE)[0] == np.float32(1.0 + 2.0 ** -23)
    x = DDArray(np.array([half]), np.array([-2.0 ** -80]))
    assert truncate(x, ScalarKind.SINGLE)[0] == np.float32(1.0)


def test_lift_examples(rng):
    assert lift(np.float32(1.5)) == 1.5
    z = lift(3.0, ScalarKind.DOUBLEDOUBLE)
    assert (z.hi, z.lo) == (3.0, 0.0)
    s = rng.standard_normal(1000).astype(np.float32)
    back = truncate(lift(s), ScalarKind.SINGLE)
    assert np.array_equal(back.view(np.int32), s.view(np.int32))
    back = truncate(lift(s, ScalarKind.DOUBLEDOUBLE), ScalarKind.SINGLE)
    assert np.array_equal(back.view(np.int32), s.view(np.int32))


def test_norm_and_conversion():
    x = DDArray(np.array([3.0, 4.0]))
    assert float(norm(x)) == 5.0
    assert np.array_equal(to_float64(asarray([1.0, 2.0], ScalarKind.DOUBLEDOUBLE)), [1.0, 2.0])


def _nearest_single(q: Fraction) -> np.float32:
    c = np.float32(float(q))
    best = None
    for cand in (np.nextafter(c, np.float32(-np.inf)), c, np.nextafter(c, np.float32(np.inf))):
        dist = abs(Fraction(float(cand)) - q)
        even = int(np.array(cand).view(np.int32)) % 2 == 0
        key = (dist, not even)
        if best is None or key < best[0]:
            best = (key, cand)
    return best[1]


@settings(max_examples=300)
@given(st.integers(-2 ** 24, 2 ** 24), st.integers(-30, 30), st.sampled_from([-1.0, 0.0, 1.0]),
       st.floats(0.0, 1.0))
def test_truncate_to_single_matches_rational_rounding(m, e, tie, frac):
    # values on or next to single-precision midpoints, with a tiny tail
    hi = (m + 0.5 * abs(tie)) * 2.0 ** e
    lo = tie * frac * 2.0 ** (e - 60)
    x = DDArray(np.array([hi]), np.array([lo]))
    x = x + 0.0  # renormalize
    exact = Fraction(x.hi[0]) + Fraction(x.lo[0])
    assert truncate(x, ScalarKind.SINGLE)[0] == _nearest_single(exact)
