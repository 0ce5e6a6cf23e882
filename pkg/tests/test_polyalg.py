import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platoon_hinf.polyalg import (Box, Polynomial, basis_count, box_moment, fit_polynomial,
                                  integrate_box, monomial_basis)

NV = 3


def poly_strategy(nvars=NV, max_deg=3, max_terms=5):
    mono = st.tuples(*[st.integers(0, max_deg)] * nvars).filter(lambda m: sum(m) <= max_deg)
    coeff = st.floats(-5, 5, allow_nan=False).map(lambda c: round(c, 3))
    return st.dictionaries(mono, coeff, max_size=max_terms).map(lambda d: Polynomial(nvars, d))


points = st.lists(st.floats(-2, 2, allow_nan=False), min_size=NV, max_size=NV)


def x(i, n=2):
    return Polynomial.variable(n, i)


# -- worked examples ----------------------------------------------------------

def test_difference_of_squares():
    assert (x(0) + 1) * (x(0) - 1) == x(0) ** 2 - 1


def test_additive_identity_and_scaling():
    p = x(0) * x(1) + 3
    assert p + Polynomial.zero(2) == p
    assert (x(0) * x(1)) * 2 == Polynomial(2, {(1, 1): 2.0})


def test_gradient_examples():
    g = (x(0) ** 2 * x(1)).gradient()
    assert g[0] == 2 * x(0) * x(1)
    assert g[1] == x(0) ** 2
    assert all(d.is_zero() for d in Polynomial.constant(2, 4.0).gradient())
    q = x(0) ** 2 + x(1) ** 2
    assert [d.evaluate([1, 1]) for d in q.gradient()] == [2.0, 2.0]


def test_evaluate_examples():
    assert (x(0, 1) ** 2 - 1).evaluate([2.0]) == 3.0
    assert Polynomial.zero(2).evaluate([1.3, -7]) == 0.0
    assert (x(0) * x(1)).evaluate([3, -2]) == -6.0


def test_monomial_basis_examples():
    assert monomial_basis(2, 1, 1) == [(1, 0), (0, 1)]
    assert monomial_basis(2, 2, 2) == [(2, 0), (1, 1), (0, 2)]
    assert len(monomial_basis(6, 2, 4)) == 21 + 56 + 126 == basis_count(6, 2, 4)


@pytest.mark.parametrize("n,lo,hi", [(1, 0, 5), (3, 0, 3), (4, 2, 4), (6, 2, 2), (7, 1, 3)])
def test_basis_count_matches_enumeration(n, lo, hi):
    b = monomial_basis(n, lo, hi)
    assert len(b) == len(set(b)) == basis_count(n, lo, hi)
    assert all(lo <= sum(m) <= hi for m in b)


def test_box_moments():
    assert box_moment((2,), Box.symmetric([1.0])) == pytest.approx(2 / 3, abs=1e-15)
    assert box_moment((1,), Box.symmetric([3.0])) == 0.0
    assert box_moment((2, 2), Box.symmetric([1.0, 1.0])) == pytest.approx(4 / 9, abs=1e-15)


def test_integrate_box_against_monte_carlo():
    rng = np.random.default_rng(1)
    box = Box((-1.0, 0.0, -2.0), (2.0, 1.0, 0.5))
    p = x(0, 3) ** 2 * x(1, 3) - 3 * x(2, 3) + x(0, 3) * x(1, 3) * x(2, 3) ** 2 + 0.7
    pts = box.sample(rng, 400_000)
    mc = p.evaluate_many(pts).mean() * box.volume()
    assert integrate_box(p, box) == pytest.approx(mc, rel=1e-2)


def test_fit_exact_line():
    s = np.linspace(0, 1, 11)
    fit = fit_polynomial(list(zip(s, s)), 1)
    assert fit.poly.coefficient((0,)) == pytest.approx(0.0, abs=1e-12)
    assert fit.poly.coefficient((1,)) == pytest.approx(1.0, abs=1e-12)


def test_fit_constant_with_constraint():
    s = np.linspace(-1, 1, 9)
    fit = fit_polynomial([(t, 1.0) for t in s], 2, interpolate_at=[(0.0, 1.0)])
    assert fit.poly.isclose(Polynomial.constant(1, 1.0), atol=1e-12)


def test_fit_interpolates_ovm_branch():
    s = np.linspace(16, 24, 201)
    v = 15 * (1 - np.cos(np.pi * (s - 5) / 30))
    fit = fit_polynomial(list(zip(s, v)), 5, interpolate_at=[(20.0, 15.0)])
    assert fit.poly.evaluate([20.0]) == pytest.approx(15.0, abs=1e-10)
    assert fit.max_residual < 1e-3


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_polynomial([(0, 0), (1, 1)], 2)
    with pytest.raises(ValueError):
        fit_polynomial([(t, t) for t in range(5)], 1, interpolate_at=[(0, 0), (1, 1)])


def test_box_validation():
    with pytest.raises(ValueError):
        Box((1.0,), (0.0,))


# -- properties ---------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(poly_strategy(), poly_strategy(), poly_strategy())
def test_ring_axioms(p, q, r):
    assert (p + q).isclose(q + p)
    assert (p * q).isclose(q * p)
    assert ((p + q) + r).isclose(p + (q + r))
    assert ((p * q) * r).isclose(p * (q * r), atol=1e-6)
    assert (p * (q + r)).isclose(p * q + p * r, atol=1e-6)
    assert (p - p).is_zero()


@settings(max_examples=60, deadline=None)
@given(poly_strategy(), poly_strategy(), points)
def test_evaluation_is_a_homomorphism(p, q, pt):
    a, b = p.evaluate(pt), q.evaluate(pt)
    assert (p + q).evaluate(pt) == pytest.approx(a + b, abs=1e-9)
    assert (p * q).evaluate(pt) == pytest.approx(a * b, rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(poly_strategy(), poly_strategy(), st.integers(0, NV - 1))
def test_product_rule(p, q, i):
    assert (p * q).diff(i).isclose(p.diff(i) * q + p * q.diff(i), atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(poly_strategy(), points, st.integers(0, NV - 1))
def test_derivative_matches_finite_difference(p, pt, i):
    h = 1e-5
    e = np.eye(NV)[i]
    fd = (p.evaluate(np.array(pt) + h * e) - p.evaluate(np.array(pt) - h * e)) / (2 * h)
    assert p.diff(i).evaluate(pt) == pytest.approx(fd, abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(poly_strategy(), st.lists(points, min_size=1, max_size=6))
def test_evaluate_many_matches_pointwise(p, pts):
    arr = np.array(pts)
    np.testing.assert_allclose(p.evaluate_many(arr), [p.evaluate(r) for r in pts], atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(poly_strategy(), poly_strategy())
def test_integral_is_linear(p, q):
    box = Box((-1.0, 0.0, -0.5), (1.0, 2.0, 1.5))
    assert integrate_box(p + 2 * q, box) == pytest.approx(
        integrate_box(p, box) + 2 * integrate_box(q, box), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.integers(0, 4), st.integers(0, 4)), st.floats(0.1, 3))
def test_odd_moments_vanish_on_symmetric_boxes(m, h):
    box = Box.symmetric([h, h])
    val = box_moment(m, box)
    if any(e % 2 for e in m):
        assert val == 0.0
    else:
        assert val == pytest.approx(math.prod(2 * h ** (e + 1) / (e + 1) for e in m))


@settings(max_examples=40, deadline=None)
@given(poly_strategy(), st.integers(0, NV - 1), poly_strategy(max_deg=1, max_terms=3), points)
def test_substitute_commutes_with_evaluation(p, i, q, pt):
    pt2 = list(pt)
    pt2[i] = q.evaluate(pt)
    assert p.substitute(i, q).evaluate(pt) == pytest.approx(p.evaluate(pt2), rel=1e-8, abs=1e-8)
