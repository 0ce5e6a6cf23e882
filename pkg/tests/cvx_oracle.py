"""Test-only bridge: solve an SdpStandardForm with cvxpy (Clarabel)."""

import cvxpy as cp


def solve_with_cvxpy(prob, solver="CLARABEL"):
    Xs = [cp.Variable((n, n), PSD=True) for n in prob.block_sizes]
    xf = cp.Variable(prob.n_free) if prob.n_free else None
    lhs = 0
    for k, n in enumerate(prob.block_sizes):
        Ak = prob.block_operator(k)
        lhs = lhs + Ak @ cp.vec(Xs[k], order="C")
    if xf is not None:
        lhs = lhs + prob.B @ xf
    obj = sum(cp.trace(Ck @ Xk) for Ck, Xk in zip(prob.C, Xs)) + prob.obj_offset
    if xf is not None:
        obj = obj + prob.c_free @ xf
    pr = cp.Problem(cp.Minimize(obj), [lhs == prob.b])
    pr.solve(solver=solver)
    return pr.status, pr.value, [X.value for X in Xs], (None if xf is None else xf.value)
