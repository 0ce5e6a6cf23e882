from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platoon_hinf.polyalg import Box, Polynomial, box_moment, monomial_basis
from platoon_hinf.sosprog import (EPS_PSD, INFEASIBLE, AffinePoly, SosProgram, gram_polynomial,
                                  newton_prune)

x = Polynomial.variable(2, 0)
y = Polynomial.variable(2, 1)
MOTZKIN = x ** 4 * y ** 2 + x ** 2 * y ** 4 - 3 * x ** 2 * y ** 2 + 1


def feasibility(expr, **kw):
    prog = SosProgram(expr.nvars)
    cid = prog.add_sos_constraint(expr, **kw)
    return prog.solve(), cid


@pytest.mark.parametrize("expr", [(x + 1) ** 2, x ** 4 + 1, x ** 4 + y ** 4 - x ** 2 * y ** 2],
                         ids=["square", "quartic", "ternary-form"])
def test_feasible_examples(expr):
    sol, cid = feasibility(expr)
    assert sol.optimal
    assert sol.gram_min_eig(cid) >= -EPS_PSD
    assert gram_polynomial(sol.program.constraints[cid].gram_basis, sol.grams[cid], 2).isclose(
        expr, atol=1e-6)


@pytest.mark.parametrize("expr,newton", [(MOTZKIN, False), (MOTZKIN, True), (x ** 2 - 1, False),
                                         (x ** 3, False)],
                         ids=["motzkin", "motzkin-newton", "negative-at-zero", "odd-degree"])
def test_infeasible_examples(expr, newton):
    sol, _ = feasibility(expr, newton=newton)
    assert sol.status == INFEASIBLE


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_random_sums_of_squares_are_certified(seed):
    rng = np.random.default_rng(seed)
    z = monomial_basis(2, 0, 2)
    M = rng.standard_normal((len(z), 3))
    p = gram_polynomial(z, M @ M.T, 2)
    sol, cid = feasibility(p)
    assert sol.optimal
    assert sol.gram_min_eig(cid) >= -EPS_PSD


def test_gram_equalities_for_square():
    prog = SosProgram(1)
    t = Polynomial.variable(1, 0)
    prog.add_sos_constraint(t ** 2 + 2 * t + 1)
    sdp = prog.to_sdp()
    assert sdp.block_sizes == [2]
    assert sdp.n_constraints == 3
    G = np.ones((2, 2))
    np.testing.assert_allclose(sdp.apply_A([G]), sdp.b)


def test_row_count_bound():
    nv, d = 3, 2
    prog = SosProgram(nv)
    prog.add_sos_constraint(Polynomial.constant(nv, 1.0) + Polynomial.variable(nv, 0) ** 4)
    assert prog.to_sdp().n_constraints <= comb(nv + 2 * d, 2 * d)


def test_min_scalar_multiplier():
    prog = SosProgram(2)
    c = prog.declare_scalar()
    prog.add_sos_constraint(c * (x ** 2) - x ** 2)
    prog.set_objective(c)
    sol = prog.solve()
    assert sol.optimal
    assert sol.value(c).constant_term() == pytest.approx(1.0, abs=1e-6)


def test_lower_bound_of_univariate_quartic():
    p = x ** 4 - 3 * x ** 2 + 1
    prog = SosProgram(2)
    t = prog.declare_scalar()
    prog.add_sos_constraint(p - t, indeterminates=[0])
    prog.set_objective(t, "maximize")
    sol = prog.solve()
    assert sol.optimal
    assert sol.value(t).constant_term() == pytest.approx(1 - 9 / 4, abs=1e-6)


def test_decision_poly_declaration():
    prog = SosProgram(2)
    assert len(prog.declare_poly(monomial_basis(2, 2, 2)).var_ids) == 3
    assert len(SosProgram(6).declare_poly(monomial_basis(6, 2, 4)).var_ids) == 203
    with pytest.raises(ValueError):
        prog.declare_poly([])


def test_objective_coefficients():
    prog = SosProgram(1)
    V = prog.declare_poly([(2,)])
    box = Box.symmetric([1.0])
    lin = {k: Polynomial.constant(1, box_moment(m, box)) for k, m in zip(V.var_ids, V.basis)}
    prog.set_objective(AffinePoly(1, None, lin))
    c, off = prog.objective_coefficients()
    assert c[0] == pytest.approx(2 / 3)
    g = prog.declare_scalar()
    prog.set_objective(g)
    np.testing.assert_array_equal(prog.objective_coefficients()[0], [0.0, 1.0])
    assert SosProgram(1).objective_coefficients()[0].size == 0


def test_objective_must_be_scalar():
    prog = SosProgram(1)
    V = prog.declare_poly([(2,)])
    with pytest.raises(ValueError):
        prog.set_objective(V.expr)


def test_scaling_preserves_membership():
    p = (x - 3 * y) ** 2 + 0.1 * x ** 4
    for scale in ([1.0, 1.0], [4.0, 0.5]):
        prog = SosProgram(2, scale)
        prog.add_sos_constraint(p)
        assert prog.solve().optimal
    prog = SosProgram(2, [4.0, 0.5])
    prog.add_sos_constraint(MOTZKIN)
    assert prog.solve().status == INFEASIBLE


def test_newton_prune_drops_unreachable_monomials():
    basis = monomial_basis(2, 0, 3)
    kept = newton_prune(basis, set(MOTZKIN.support()))
    assert (0, 0) in kept and (1, 1) in kept
    assert (3, 0) not in kept and (2, 0) not in kept


def test_affine_arithmetic_matches_values():
    prog = SosProgram(2)
    a = prog.declare_scalar()
    b = prog.declare_scalar()
    e = a * x + b * (y ** 2) - x * 2 + 3
    d = np.array([0.5, -2.0])
    expect = 0.5 * x - 2.0 * y ** 2 - 2 * x + 3
    assert e.value(d).isclose(expect)
    assert e.diff(1).value(d).isclose(expect.diff(1))
