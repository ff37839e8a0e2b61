import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from sbfr.errors import DomainError
from sbfr.lattice import (
    Box,
    LatticeFunction,
    hilbert_distance,
    l1_normalize,
    straddles_one,
    trapezoid_weights,
    truncate_clamp,
)

UNIT = Box([0.0], [1.0])
positive = st.floats(1e-3, 1e3)


def lf(values, box=UNIT):
    return LatticeFunction(box, np.asarray(values, dtype=float))


def vectors(n=6):
    return hnp.arrays(float, n, elements=positive)


def test_scaling_invariance():
    f = lf([1.0, 2.5, 0.3])
    assert hilbert_distance(f, f.with_values(3 * f.values)) == pytest.approx(0.0, abs=1e-15)


def test_two_node_distance():
    assert hilbert_distance(lf([1, 2]), lf([2, 1])) == pytest.approx(math.log(4))


def test_distance_bound_example():
    d = hilbert_distance(lf([1, 1.1]), lf([1.05, 1]))
    assert d == pytest.approx(math.log(1.1 * 1.05))
    assert d <= 2 * 0.1 / 1


def test_mismatched_lattices_rejected():
    with pytest.raises(DomainError):
        hilbert_distance(lf([1, 2]), lf([1, 2, 3]))
    with pytest.raises(DomainError):
        hilbert_distance(lf([1, 2]), lf([1, 2], Box([0.0], [2.0])))
    with pytest.raises(DomainError):
        lf([1.0, -1.0])


@given(vectors(), vectors())
def test_symmetry_and_nonnegativity(a, b):
    f, g = lf(a), lf(b)
    assert hilbert_distance(f, g) >= 0
    assert hilbert_distance(f, g) == pytest.approx(hilbert_distance(g, f), rel=1e-12, abs=1e-12)


@given(vectors(), vectors(), vectors())
def test_triangle_inequality(a, b, c):
    f, g, h = lf(a), lf(b), lf(c)
    assert hilbert_distance(f, h) <= hilbert_distance(f, g) + hilbert_distance(g, h) + 1e-9


@given(vectors(), st.floats(1e-3, 1e3))
def test_zero_iff_proportional(a, c):
    f = lf(a)
    assert hilbert_distance(f, f.with_values(c * a)) < 1e-12
    b = a.copy()
    b[0] *= 1.5
    assert hilbert_distance(f, f.with_values(b)) > 0.1


def straddling(a, up, down):
    """Ratio vector around ``a`` whose first entry is >= 1 and second <= 1."""
    r = np.asarray(a, dtype=float)
    r = r / r.max() * 2.0 + 0.01
    r[0], r[1] = up, down
    return r


@given(vectors(), vectors(), st.floats(1.0, 3.0), st.floats(0.3, 1.0))
def test_two_sided_ratio_bounds(a, b, up, down):
    # when sup(f/g) >= 1 >= inf(f/g): |f - g| <= (e^d - 1) g and d <= 2 eta / (1 - eta)
    a = b * straddling(a, up, down)
    f, g = lf(a), lf(b)
    d = hilbert_distance(f, g)
    assert np.all(np.abs(a - b) <= (math.exp(d) - 1) * b * (1 + 1e-9))
    eta = np.max(np.abs(a - b)) / min(a.min(), b.min())
    if eta < 1:
        assert d <= 2 * eta / (1 - eta) * (1 + 1e-9) + 1e-12


def test_clamp_examples():
    f = lf([1.2, 1.5])
    assert np.array_equal(truncate_clamp(f, 1.0, 2.0).values, f.values)
    assert truncate_clamp(lf([0.1, 5.0]), 1.0, 2.0).values.tolist() == [1.0, 2.0]
    with pytest.raises(DomainError):
        truncate_clamp(f, 2.0, 2.0)
    with pytest.raises(DomainError):
        truncate_clamp(f, 0.0, 2.0)


@given(vectors(8), hnp.arrays(float, 8, elements=st.floats(0, 1)), st.floats(0.01, 10),
       st.floats(1.01, 100), st.floats(0, 1), st.floats(0, 1))
def test_truncation_is_non_expansive_under_straddle(a, t, lo, ratio, up, down):
    hi = lo * ratio
    b = lo + t * (hi - lo)
    g = lf(b)
    # one in-range node with f >= g and one with f <= g
    a = a.copy()
    a[0] = min(b[0] + up * (hi - b[0]), hi)
    a[1] = max(b[1] - down * (b[1] - lo), lo)
    a = np.maximum(a, 1e-300)
    f = lf(a)
    inside = (a >= lo) & (a <= hi)
    r = a[inside] / b[inside]
    assert r.max() >= 1 >= r.min()
    assert hilbert_distance(truncate_clamp(f, lo, hi), g) <= hilbert_distance(f, g) + 1e-12


def test_normalize_examples():
    f = LatticeFunction.constant(UNIT, (5,), 2.0)
    out, norm = l1_normalize(f)
    assert norm == pytest.approx(2.0)
    np.testing.assert_allclose(out.values, 1.0)
    again, n2 = l1_normalize(out)
    np.testing.assert_allclose(again.values, out.values, rtol=1e-15)
    assert n2 == pytest.approx(1.0)
    _, norm = l1_normalize(LatticeFunction.from_function(UNIT, 101, lambda x: x[:, 0] + 1))
    assert abs(norm - 1.5) < 1e-10


@given(vectors(7), vectors(7))
def test_equal_norms_straddle(a, b):
    f, _ = l1_normalize(lf(a))
    g, _ = l1_normalize(lf(b))
    assert straddles_one(f, g)


def test_trapezoid_weights_integrate_bilinear_exactly():
    box = Box([0.0, -1.0], [2.0, 1.0])
    f = LatticeFunction.from_function(box, (9, 5), lambda x: 3 + x[:, 0] + 0.5 * x[:, 0] * x[:, 1] + 2)
    # exact: int (5 + x) dx dy over the box (the xy term integrates to zero)
    assert f.integral() == pytest.approx(2 * (5 * 2 + 2), rel=1e-14)
    assert trapezoid_weights(box, (9, 5)).sum() == pytest.approx(box.volume)


@given(st.floats(0, 1), st.floats(0, 1))
def test_interpolation_reproduces_bilinear(x, y):
    box = Box([0.0, 0.0], [1.0, 1.0])
    func = lambda p: 1 + p[:, 0] + 2 * p[:, 1] + 3 * p[:, 0] * p[:, 1]  # noqa: E731
    f = LatticeFunction.from_function(box, (4, 6), func)
    pt = np.array([[x, y]])
    assert f(pt)[0] == pytest.approx(func(pt)[0], rel=1e-12)


def test_box_validation():
    with pytest.raises(DomainError):
        Box([1.0], [0.0])
    b = Box([0.0, 0.0], [1.0, 2.0]).inflate(0.1)
    np.testing.assert_allclose(b.lo, [-0.1, -0.2])
    np.testing.assert_allclose(b.hi, [1.1, 2.2])
