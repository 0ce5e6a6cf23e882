import io

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from platoon_hinf.sdp import (DUAL_INFEASIBLE, OPTIMAL, PRIMAL_INFEASIBLE, SdpStandardForm,
                              read_sdp_text, solve_sdp, write_sdp_text)


def lambda_max_problem(A):
    """min y  s.t.  X = y I - A  PSD, encoded as X_ij - y d_ij = -A_ij."""
    n = A.shape[0]
    rows, ii, jj, vals, b, brow = [], [], [], [], [], []
    r = 0
    for i in range(n):
        for j in range(i, n):
            rows.append(r)
            ii.append(i)
            jj.append(j)
            vals.append(1.0 if i == j else 0.5)
            b.append(-A[i, j])
            if i == j:
                brow.append(r)
            r += 1
    B = sp.csr_matrix((-np.ones(len(brow)), (brow, [0] * len(brow))), shape=(r, 1))
    return SdpStandardForm([n], b=b, A_entries=[(rows, ii, jj, vals)], C=[np.zeros((n, n))],
                           n_free=1, B=B, c_free=[1.0])


def trace_problem(C):
    """min <C, X>  s.t.  tr X = 1, X PSD; optimum is lambda_min(C)."""
    n = C.shape[0]
    idx = np.arange(n)
    return SdpStandardForm([n], b=[1.0], A_entries=[(np.zeros(n), idx, idx, np.ones(n))], C=[C])


def test_two_by_two_trace_example():
    r = solve_sdp(trace_problem(np.diag([1.0, 2.0])))
    assert r.status == OPTIMAL
    assert r.primal_objective == pytest.approx(1.0, abs=1e-7)
    np.testing.assert_allclose(r.X[0], np.diag([1.0, 0.0]), atol=1e-6)


def test_trace_zero_forces_zero():
    p = SdpStandardForm([2], b=[0.0], A_entries=[([0, 0], [0, 1], [0, 1], [1.0, 1.0])],
                        C=[np.zeros((2, 2))])
    r = solve_sdp(p)
    assert r.status == OPTIMAL
    assert np.abs(r.X[0]).max() < 1e-6


@pytest.mark.parametrize("n", [3, 10, 30])
def test_lambda_max(n):
    rng = np.random.default_rng(n)
    A = rng.standard_normal((n, n))
    A = A + A.T
    r = solve_sdp(lambda_max_problem(A))
    assert r.status == OPTIMAL
    assert r.x_free[0] == pytest.approx(np.linalg.eigvalsh(A)[-1], abs=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000))
def test_trace_normalized_eigenvalue(n, seed):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((n, n))
    C = C + C.T
    r = solve_sdp(trace_problem(C))
    assert r.status == OPTIMAL
    assert r.primal_objective == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-6)
    assert r.dual_objective == pytest.approx(r.primal_objective, abs=1e-6 * (1 + abs(r.primal_objective)))


def test_primal_infeasible():
    # X11 = -1 with X PSD
    p = SdpStandardForm([2], b=[-1.0], A_entries=[([0], [0], [0], [1.0])], C=[np.eye(2)])
    assert solve_sdp(p).status == PRIMAL_INFEASIBLE


def test_dual_infeasible():
    # min -X11 s.t. X12 = 0 is unbounded below
    p = SdpStandardForm([2], b=[0.0], A_entries=[([0], [0], [1], [1.0])], C=[np.diag([-1.0, 0.0])])
    assert solve_sdp(p).status == DUAL_INFEASIBLE


def random_feasible_sdp(rng, sizes, m, n_free):
    """Random problem with a strictly feasible primal and dual point."""
    entries, Xs = [], []
    for n in sizes:
        rr, ii, jj, vv = [], [], [], []
        for r in range(m):
            for i in range(n):
                for j in range(i, n):
                    if rng.random() < 0.5:
                        rr.append(r)
                        ii.append(i)
                        jj.append(j)
                        vv.append(rng.standard_normal())
        entries.append((rr, ii, jj, vv))
        M = rng.standard_normal((n, n))
        Xs.append(M @ M.T + np.eye(n))
    B = sp.csr_matrix(rng.standard_normal((m, n_free))) if n_free else None
    xf = rng.standard_normal(n_free)
    y = rng.standard_normal(m)
    proto = SdpStandardForm(sizes, b=np.zeros(m), A_entries=entries,
                            C=[np.zeros((n, n)) for n in sizes], n_free=n_free, B=B)
    b = proto.apply_A(Xs, xf)
    C = []
    for k, n in enumerate(sizes):
        Aty = (proto.block_operator(k).T @ y).reshape(n, n)
        M = rng.standard_normal((n, n))
        C.append(Aty + M @ M.T + np.eye(n))
    c_free = proto.B.T @ y if n_free else None
    return SdpStandardForm(sizes, b=b, A_entries=entries, C=C, n_free=n_free, B=B, c_free=c_free)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_matches_cvxpy_on_random_problems(seed):
    cvx = pytest.importorskip("cvx_oracle")
    rng = np.random.default_rng(seed)
    p = random_feasible_sdp(rng, [3, 2], m=5, n_free=2)
    r = solve_sdp(p)
    status, val, _, _ = cvx.solve_with_cvxpy(p)
    assert r.status == OPTIMAL and status == "optimal"
    assert r.primal_objective == pytest.approx(val, rel=1e-5, abs=1e-5)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_weak_duality_and_feasibility(seed):
    rng = np.random.default_rng(seed)
    p = random_feasible_sdp(rng, [4, 1], m=6, n_free=1)
    r = solve_sdp(p)
    assert r.status == OPTIMAL
    for X, S in zip(r.X, r.S):
        assert np.linalg.eigvalsh(X)[0] > -1e-7
        assert np.linalg.eigvalsh(S)[0] > -1e-7
    resid = np.abs(p.apply_A(r.X, r.x_free) - p.b).max()
    assert resid <= 1e-6 * (1 + np.abs(p.b).max())
    assert r.primal_objective - r.dual_objective > -1e-6 * (1 + abs(r.primal_objective))


def test_text_round_trip():
    rng = np.random.default_rng(7)
    p = random_feasible_sdp(rng, [3, 2], m=4, n_free=2)
    buf = io.StringIO()
    write_sdp_text(p, buf)
    q = read_sdp_text(io.StringIO(buf.getvalue()))
    assert solve_sdp(q).primal_objective == pytest.approx(solve_sdp(p).primal_objective, abs=1e-9)


def test_validation():
    with pytest.raises(ValueError):
        SdpStandardForm([2], b=[1.0], A_entries=[([1], [0], [0], [1.0])], C=[np.eye(2)])
    with pytest.raises(ValueError):
        SdpStandardForm([2], b=[1.0], A_entries=[([0], [0], [2], [1.0])], C=[np.eye(2)])
    with pytest.raises(ValueError):
        SdpStandardForm([2], b=[1.0], A_entries=[([0], [0], [0], [1.0])], C=[np.eye(3)])


def test_free_variable_in_no_row():
    base = trace_problem(np.diag([1.0, 2.0]))
    B = sp.csr_matrix((1, 1))
    p = SdpStandardForm([2], b=base.b, A_entries=base.A_entries, C=base.C, n_free=1, B=B)
    r = solve_sdp(p)
    assert r.status == OPTIMAL and r.x_free[0] == 0.0
    assert r.primal_objective == pytest.approx(1.0, abs=1e-7)
    q = SdpStandardForm([2], b=base.b, A_entries=base.A_entries, C=base.C, n_free=1, B=B,
                        c_free=[1.0])
    assert solve_sdp(q).status == DUAL_INFEASIBLE
