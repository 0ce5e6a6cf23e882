"""Primal-dual interior-point solver for block semidefinite programs.

Standard form (minimisation)::

    min   sum_k <C_k, X_k> + c_free . x_free
    s.t.  sum_k <A_ik, X_k> + (B x_free)_i = b_i      i = 1..m
          X_k  PSD,  x_free unrestricted

with dual ``max b.y  s.t.  S_k = C_k - sum_i y_i A_ik  PSD,  B^T y = c_free``.

The method is infeasible-start path following with Mehrotra
predictor-corrector steps along the HKM direction.  Free variables enter the
Newton system through an augmented (KKT) matrix instead of being split.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal-infeasible"
DUAL_INFEASIBLE = "dual-infeasible"
STALLED = "stalled"
INACCURATE = "inaccurate"   # stalled, but the best iterate meets the relaxed tolerances

_KRON_MAX = 24       # blocks up to this size use the Kronecker Schur formula
_GROUP = 64          # constraint rows per batch in the looped Schur formula
_REFINE = 3          # iterative-refinement sweeps per Newton solve
_GMRES_ITERS = 100   # Krylov correction on the true Newton operator
_RELAX = 100.0       # feasibility tolerance factor for the inaccurate status
_RELAX_GAP = 1000.0  # gap tolerance factor for the inaccurate status
_STALL_WINDOW = 8    # iterations without halving the merit before giving up


@dataclass
class SdpStandardForm:
    """Problem data.  ``A_entries[k]`` holds COO arrays ``(row, i, j, val)``
    describing the symmetric matrices ``A_ik``: each triplet sets both
    ``A[i, j]`` and ``A[j, i]``."""

    block_sizes: list[int]
    b: np.ndarray
    A_entries: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    C: list[np.ndarray]
    n_free: int = 0
    B: sp.csr_matrix | None = None
    c_free: np.ndarray | None = None
    obj_offset: float = 0.0

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float).ravel()
        m = self.b.size
        if len(self.A_entries) != len(self.block_sizes) or len(self.C) != len(self.block_sizes):
            raise ValueError("one A_entries tuple and one C matrix per block required")
        cleaned = []
        for n, (r, i, j, v) in zip(self.block_sizes, self.A_entries):
            r, i, j = (np.asarray(a, dtype=np.int64).ravel() for a in (r, i, j))
            v = np.asarray(v, dtype=float).ravel()
            if not (r.size == i.size == j.size == v.size):
                raise ValueError("COO arrays differ in length")
            if r.size and (r.min() < 0 or r.max() >= m):
                raise ValueError("constraint row index out of range")
            if i.size and (min(i.min(), j.min()) < 0 or max(i.max(), j.max()) >= n):
                raise ValueError("matrix index out of range for block")
            lo, hi = np.minimum(i, j), np.maximum(i, j)
            cleaned.append((r, lo, hi, v))
        self.A_entries = cleaned
        self.C = [0.5 * (np.asarray(Ck, dtype=float) + np.asarray(Ck, dtype=float).T)
                  for Ck in self.C]
        for n, Ck in zip(self.block_sizes, self.C):
            if Ck.shape != (n, n):
                raise ValueError("objective block has wrong shape")
        if self.B is None:
            self.B = sp.csr_matrix((m, self.n_free))
        self.B = sp.csr_matrix(self.B, dtype=float)
        if self.B.shape != (m, self.n_free):
            raise ValueError("B must be m x n_free")
        self.c_free = (np.zeros(self.n_free) if self.c_free is None
                       else np.asarray(self.c_free, dtype=float).ravel())
        if self.c_free.size != self.n_free:
            raise ValueError("c_free has wrong length")

    @property
    def n_constraints(self) -> int:
        return self.b.size

    # -- operators on the original data ---------------------------------
    def block_operator(self, k: int) -> sp.csr_matrix:
        """Sparse ``m x n_k^2`` matrix whose row i is vec(A_ik) (row-major)."""
        n = self.block_sizes[k]
        r, i, j, v = self.A_entries[k]
        off = i != j
        rows = np.concatenate([r, r[off]])
        cols = np.concatenate([i * n + j, j[off] * n + i[off]])
        vals = np.concatenate([v, v[off]])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_constraints, n * n))

    def apply_A(self, X: Sequence[np.ndarray], x_free: np.ndarray | None = None) -> np.ndarray:
        out = np.zeros(self.n_constraints)
        for k, Xk in enumerate(X):
            out += self.block_operator(k) @ np.asarray(Xk).ravel()
        if self.n_free and x_free is not None:
            out += self.B @ x_free
        return out

    def objective(self, X: Sequence[np.ndarray], x_free: np.ndarray | None = None) -> float:
        val = sum(float(np.sum(Ck * Xk)) for Ck, Xk in zip(self.C, X))
        if self.n_free and x_free is not None:
            val += float(self.c_free @ x_free)
        return val + self.obj_offset


@dataclass
class SdpResult:
    status: str
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    x_free: np.ndarray
    primal_objective: float
    dual_objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    history: list[dict] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Block:
    """Per-block precomputation on row-scaled data."""

    def __init__(self, n: int, A_op: sp.csr_matrix):
        self.n = n
        self.A_op = A_op                               # m x n^2
        self.AT_op = A_op.T.tocsr()                    # n^2 x m
        coo = A_op.tocoo()
        rows = np.unique(coo.row)
        self.rows = rows
        self.A_loc = A_op[rows].tocsr()                # m_k x n^2
        if n > _KRON_MAX:
            loc = self.A_loc.tocoo()
            order = np.argsort(loc.row, kind="stable")
            lr, col, val = loc.row[order], loc.col[order], loc.data[order]
            self.r_idx = col // n
            self.s_idx = col % n
            self.vals = val
            self.bounds = np.searchsorted(lr, np.arange(rows.size + 1))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.A_op @ X.ravel()

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        M = (self.AT_op @ y).reshape(self.n, self.n)
        return 0.5 * (M + M.T)

    def schur(self, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
        """Local Schur block ``M_ij = tr(A_i X A_j Z)`` on the active rows."""
        n = self.n
        if n <= _KRON_MAX:
            K = np.kron(X, Z)
            T = self.A_loc @ K                          # m_k x n^2
            return np.asarray(self.A_loc @ T.T)
        mk = self.rows.size
        out = np.empty((mk, mk))
        bnd = self.bounds
        for g0 in range(0, mk, _GROUP):
            g1 = min(mk, g0 + _GROUP)
            stack = np.empty((g1 - g0, n * n))
            for q, j in enumerate(range(g0, g1)):
                sl = slice(bnd[j], bnd[j + 1])
                stack[q] = ((X[:, self.r_idx[sl]] * self.vals[sl]) @ Z[self.s_idx[sl], :]).ravel()
            out[:, g0:g1] = self.A_loc @ stack.T
        return 0.5 * (out + out.T)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest t with X + t dX PSD (X positive definite)."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    T = sla.solve_triangular(L, dX, lower=True)
    T = sla.solve_triangular(L, T.T, lower=True)
    lam = np.linalg.eigvalsh(_sym(T))[0]
    return math.inf if lam >= 0 else -1.0 / lam


def _primal_projector(blocks, B_s):
    """Factor ``G = A A^* (+ B B^T)`` so that ``w = G^{-1} e`` gives the least
    norm correction ``A^* w`` (and ``B^T w``) fixing a primal residual ``e``."""
    m = blocks[0].A_op.shape[0] if blocks else B_s.shape[0]
    G = np.zeros((m, m))
    for bl in blocks:
        n = bl.n
        A = bl.A_op
        perm = (np.arange(n * n).reshape(n, n).T).ravel()
        As = 0.5 * (A + A[:, perm])
        G += (As @ As.T).toarray()
    if B_s is not None:
        G += (B_s @ B_s.T).toarray()
    G[np.diag_indices(m)] += 1e-12 * max(1.0, float(np.trace(G)) / max(m, 1))
    try:
        c = sla.cho_factor(G, lower=True)
    except sla.LinAlgError:
        return None
    return lambda e: sla.cho_solve(c, e)


def _inv_pd(S: np.ndarray) -> np.ndarray:
    c = sla.cho_factor(S, lower=True)
    return _sym(sla.cho_solve(c, np.eye(S.shape[0])))


def solve_sdp(prob: SdpStandardForm, tol_gap: float = 1e-7, tol_feas: float = 1e-7,
              max_iter: int = 200, tol_infeas: float = 1e-8,
              verbose: bool = False, presolve: bool = True) -> SdpResult:
    """Solve ``prob``; see the module docstring for the problem form.

    With ``presolve`` free variables that appear in no row are dropped and
    those pinned by a single row are eliminated (see
    :func:`eliminate_singleton_free`).
    """
    if presolve and prob.n_free:
        used = np.diff(prob.B.tocsc().indptr) > 0
        if not used.all():
            # a free variable in no row only moves the objective
            if np.any(prob.c_free[~used] != 0.0):
                return _trivial_result(prob, DUAL_INFEASIBLE)
            keep = np.flatnonzero(used)
            sub = SdpStandardForm(list(prob.block_sizes), prob.b, prob.A_entries, prob.C,
                                  keep.size, prob.B[:, keep], prob.c_free[keep], prob.obj_offset)
            res = solve_sdp(sub, tol_gap, tol_feas, max_iter, tol_infeas, verbose, True)
            xf = np.zeros(prob.n_free)
            xf[keep] = res.x_free
            res.x_free = xf
            return res
    if presolve:
        el = eliminate_singleton_free(prob)
        if el is not None:
            res = solve_sdp(el.reduced, tol_gap, tol_feas, max_iter, tol_infeas, verbose, False)
            return el.recover(res)
    m = prob.n_constraints
    nf = prob.n_free
    if m == 0:
        raise ValueError("SDP needs at least one constraint")
    sizes = list(prob.block_sizes)
    ops = [prob.block_operator(k) for k in range(len(sizes))]
    B = prob.B

    # -- row scaling -----------------------------------------------------
    sq = np.zeros(m)
    for op in ops:
        sq += np.asarray(op.multiply(op).sum(axis=1)).ravel()
    if nf:
        sq += np.asarray(B.multiply(B).sum(axis=1)).ravel()
    norms = np.sqrt(sq)
    empty = norms == 0.0
    if np.any(empty & (np.abs(prob.b) > 0)):
        # a row with no variables but nonzero right-hand side
        return _trivial_result(prob, PRIMAL_INFEASIBLE)
    keep = ~empty
    d = np.where(keep, norms, 1.0)
    Dinv = sp.diags(1.0 / d)
    ops_s = [(Dinv @ op).tocsr()[keep] for op in ops]
    B_s = (Dinv @ B).tocsr()[keep]
    b_s = (prob.b / d)[keep]
    ms = int(keep.sum())
    blocks = [_Block(n, op) for n, op in zip(sizes, ops_s)]
    proj = _primal_projector(blocks, B_s if nf else None)
    Bd = B_s.toarray() if nf else None
    C = prob.C
    cf = prob.c_free
    N = sum(sizes)

    normb = max(1.0, float(np.abs(prob.b).max()))
    normC = max([1.0] + [float(np.abs(Ck).max()) if Ck.size else 0.0 for Ck in C]
                + ([float(np.abs(cf).max())] if nf else []))
    nb2 = 1.0 + np.linalg.norm(prob.b)
    nC2 = 1.0 + math.sqrt(sum(float(np.sum(Ck * Ck)) for Ck in C) + float(cf @ cf))

    # -- initial point -----------------------------------------------------
    scale = max(1.0, normb, normC)
    X = [scale * np.eye(n) for n in sizes]
    S = [scale * np.eye(n) for n in sizes]
    y = np.zeros(ms)
    xf = np.zeros(nf)

    history: list[dict] = []
    status = STALLED
    small_steps = 0
    it = 0
    best = None
    best_it = 0

    def residuals(X, S, y, xf):
        rp = b_s - sum(bl.apply(Xk) for bl, Xk in zip(blocks, X))
        if nf:
            rp = rp - B_s @ xf
        Rd = [Ck - bl.adjoint(y) - Sk for Ck, bl, Sk in zip(C, blocks, S)]
        rf = cf - B_s.T @ y if nf else np.zeros(0)
        return rp, Rd, rf

    for it in range(max_iter + 1):
        rp, Rd, rf = residuals(X, S, y, xf)
        pobj = sum(float(np.sum(Ck * Xk)) for Ck, Xk in zip(C, X)) + (float(cf @ xf) if nf else 0.0)
        dobj = float(b_s @ y)
        xs = sum(float(np.sum(Xk * Sk)) for Xk, Sk in zip(X, S))
        mu = xs / N
        # residuals measured in the unscaled rows
        pinf = np.linalg.norm(rp * d[keep]) / nb2
        dinf = math.sqrt(sum(float(np.sum(R * R)) for R in Rd) + float(rf @ rf)) / nC2
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append(dict(iter=it, pobj=pobj + prob.obj_offset, dobj=dobj + prob.obj_offset,
                            pinf=pinf, dinf=dinf, gap=relgap, mu=mu, xs=xs))
        if verbose:
            log.info("it %3d pobj %+.8e dobj %+.8e pinf %.1e dinf %.1e gap %.1e",
                     it, pobj, dobj, pinf, dinf, relgap)
        # feasibility-first merit: the primal iterate is the certificate
        merit = max(pinf / tol_feas, dinf / tol_feas, relgap * _RELAX / (_RELAX_GAP * tol_gap))
        history[-1]["merit"] = merit
        if best is None or merit < best[0]:
            best = (merit, [Xk.copy() for Xk in X], y.copy(), [Sk.copy() for Sk in S], xf.copy())
            best_it = it
        if it - best_it >= 3 * _STALL_WINDOW or (
                it >= _STALL_WINDOW and merit > 0.5 * history[it - _STALL_WINDOW]["merit"]
                and best[0] <= _RELAX):
            break
        if relgap <= tol_gap and pinf <= tol_feas and dinf <= tol_feas:
            status = OPTIMAL
            break
        # infeasibility certificates (heuristic)
        if dobj > 0:
            viol = (math.sqrt(sum(float(np.sum((R - Ck) ** 2)) for R, Ck in zip(Rd, C)))
                    + (np.linalg.norm(cf - rf) if nf else 0.0))
            if viol / dobj < tol_infeas:
                status = PRIMAL_INFEASIBLE
                break
        if pobj < 0:
            viol = np.linalg.norm(b_s - rp)
            if viol / -pobj < tol_infeas:
                status = DUAL_INFEASIBLE
                break
        if it == max_iter:
            break

        # -- Newton system -------------------------------------------------
        try:
            Z = [_inv_pd(Sk) for Sk in S]
        except np.linalg.LinAlgError:
            break
        # KKT matrix [[M, B], [B', 0]] assembled in place
        Ks = np.zeros((ms + nf, ms + nf))
        M = Ks[:ms, :ms]
        for bl, Xk, Zk in zip(blocks, X, Z):
            if bl.rows.size:
                M[np.ix_(bl.rows, bl.rows)] += bl.schur(Xk, Zk)
        # symmetric equilibration, then LU with iterative refinement against
        # the unregularised matrix (the Schur block degrades near the optimum)
        dm = np.sqrt(np.maximum(np.abs(np.diag(M)), 1e-300))
        eq = np.ones(ms + nf)
        eq[:ms] = 1.0 / dm
        if nf:
            cn = np.sqrt(((Bd / dm[:, None]) ** 2).sum(axis=0))
            eq[ms:] = np.where(cn > 0, 1.0 / np.maximum(cn, 1e-300), 1.0)
            Ks[:ms, ms:] = Bd
            Ks[ms:, :ms] = Bd.T
        Ks *= eq[:, None]
        Ks *= eq[None, :]
        Kreg = Ks.copy()
        Kreg[np.diag_indices(ms)] += 1e-13
        try:
            lu = sla.lu_factor(Kreg, overwrite_a=True, check_finite=False)
        except (ValueError, sla.LinAlgError):
            break
        if not np.all(np.isfinite(lu[0])):
            break

        def kkt_solve(rhs, refine=_REFINE):
            r = rhs * eq
            sol = sla.lu_solve(lu, r, check_finite=False)
            for _ in range(refine):
                res = r - Ks @ sol
                if not np.linalg.norm(res) > 1e-15 * (1.0 + np.linalg.norm(r)):
                    break
                sol = sol + sla.lu_solve(lu, res, check_finite=False)
            return sol * eq

        def direction(Rc):
            # Rc: complementarity right-hand side for dX (list per block)
            tmp = [Rck - _sym(Xk @ Rdk @ Zk) for Rck, Xk, Rdk, Zk in zip(Rc, X, Rd, Z)]
            h = rp - sum(bl.apply(t) for bl, t in zip(blocks, tmp))
            rhs = np.concatenate([h, rf]) if nf else h
            sol = kkt_solve(rhs)

            def true_op(v):
                dy, dxf = v[:ms], v[ms:]
                ax = sum(bl.apply(_sym(Xk @ bl.adjoint(dy) @ Zk)) for bl, Xk, Zk in zip(blocks, X, Z))
                if not nf:
                    return ax
                return np.concatenate([ax + B_s @ dxf, B_s.T @ dy])

            res = rhs - true_op(sol)
            rn = np.linalg.norm(res)
            if rn > 1e-14 * (1.0 + np.linalg.norm(rhs)):
                # the assembled Schur matrix loses accuracy near the optimum:
                # GMRES on the true operator, preconditioned by its LU
                n_all = ms + nf
                op = spla.LinearOperator((n_all, n_all), matvec=true_op)
                # plain LU as preconditioner, GMRES does the refinement
                pre = spla.LinearOperator((n_all, n_all), matvec=lambda v: kkt_solve(v, 0))
                corr, _ = spla.gmres(op, res, M=pre, rtol=1e-10, atol=1e-14 * (1.0 + np.linalg.norm(rhs)),
                                     restart=_GMRES_ITERS, maxiter=3)
                sol = sol + corr
                if verbose:
                    log.debug("        krylov |res| %.2e -> %.2e (|rhs| %.2e)", rn,
                              np.linalg.norm(rhs - true_op(sol)), np.linalg.norm(rhs))
            dy, dxf = sol[:ms], sol[ms:]
            dS = [Rdk - bl.adjoint(dy) for Rdk, bl in zip(Rd, blocks)]
            dX = [Rck - _sym(Xk @ dSk @ Zk) for Rck, Xk, dSk, Zk in zip(Rc, X, dS, Z)]
            if proj is not None:
                # restore the primal equations exactly; the Newton solve alone
                # cannot once S^{-1} is badly conditioned
                e = rp - sum(bl.apply(v) for bl, v in zip(blocks, dX))
                if nf:
                    e = e - B_s @ dxf
                w = proj(e)
                dX = [v + bl.adjoint(w) for v, bl in zip(dX, blocks)]
                if nf:
                    dxf = dxf + B_s.T @ w
            return dX, dy, dS, dxf

        def steps(dX, dS):
            ap = min([1.0] + [_max_step(Xk, dXk) for Xk, dXk in zip(X, dX)])
            ad = min([1.0] + [_max_step(Sk, dSk) for Sk, dSk in zip(S, dS)])
            return ap, ad

        # predictor
        dXa, dya, dSa, dxfa = direction([-Xk for Xk in X])
        ap, ad = steps(dXa, dSa)
        mu_aff = sum(float(np.sum((Xk + ap * a) * (Sk + ad * c)))
                     for Xk, a, Sk, c in zip(X, dXa, S, dSa)) / N
        expon = max(1.0, 3.0 * min(ap, ad) ** 2)
        sigma = min(1.0, (max(mu_aff, 0.0) / mu) ** expon) if mu > 0 else 0.0
        # corrector
        Rc = [sigma * mu * Zk - Xk - _sym(a @ c @ Zk)
              for Zk, Xk, a, c in zip(Z, X, dXa, dSa)]
        dX, dy, dS, dxf = direction(Rc)
        if not all(np.all(np.isfinite(v)) for v in dX + dS) or not np.all(np.isfinite(dy)):
            break
        ap, ad = steps(dX, dS)
        ap = min(1.0, 0.95 * ap)
        ad = min(1.0, 0.95 * ad)
        history[-1].update(step_p=ap, step_d=ad, sigma=sigma)
        if verbose:
            log.info("      step_p %.2e step_d %.2e sigma %.2e", ap, ad, sigma)
        X = [_sym(Xk + ap * v) for Xk, v in zip(X, dX)]
        xf = xf + ap * dxf
        y = y + ad * dy
        S = [_sym(Sk + ad * v) for Sk, v in zip(S, dS)]
        if max(ap, ad) < 1e-8:
            small_steps += 1
            if small_steps >= 3:
                break
        else:
            small_steps = 0

    if status == STALLED and best is not None:
        merit, X, y, S, xf = best
        rp, Rd, rf = residuals(X, S, y, xf)
        if merit <= _RELAX:
            status = INACCURATE
    y_full = np.zeros(m)
    y_full[keep] = y / d[keep]
    pobj_u = prob.objective(X, xf)
    dobj_u = float(prob.b @ y_full) + prob.obj_offset
    pinf = float(np.linalg.norm(prob.b - prob.apply_A(X, xf)) / nb2)
    dinf = math.sqrt(sum(float(np.sum(R * R)) for R in Rd) + float(rf @ rf)) / nC2
    gap = abs(pobj_u - dobj_u) / (1.0 + abs(pobj_u) + abs(dobj_u))
    return SdpResult(status=status, X=X, y=y_full, S=S, x_free=xf,
                     primal_objective=pobj_u, dual_objective=dobj_u, gap=gap,
                     primal_residual=pinf, dual_residual=dinf, iterations=it,
                     history=history)


@dataclass
class _FreeElimination:
    """Record of eliminated free variables: ``x_k = (b_p - <A_p, X>) / D_k``."""

    prob: SdpStandardForm
    reduced: SdpStandardForm
    elim: np.ndarray        # eliminated free-variable indices
    pivots: np.ndarray      # their pivot rows
    D: np.ndarray           # B[pivot, k]
    keep_rows: np.ndarray   # boolean mask of surviving rows
    keep_free: np.ndarray   # surviving free-variable indices

    def recover(self, res: SdpResult) -> SdpResult:
        p = self.prob
        xf = np.zeros(p.n_free)
        xf[self.keep_free] = res.x_free
        AX = p.apply_A(res.X)
        xf[self.elim] = (p.b[self.pivots] - AX[self.pivots]) / self.D
        y = np.zeros(p.n_constraints)
        y[self.keep_rows] = res.y
        Bk = p.B[:, self.elim].tocsc()
        y[self.pivots] = (p.c_free[self.elim] - Bk.T @ y) / self.D
        pinf = float(np.linalg.norm(p.b - p.apply_A(res.X, xf)) / (1.0 + np.linalg.norm(p.b)))
        return SdpResult(status=res.status, X=res.X, y=y, S=res.S, x_free=xf,
                         primal_objective=p.objective(res.X, xf),
                         dual_objective=float(p.b @ y) + p.obj_offset, gap=res.gap,
                         primal_residual=pinf, dual_residual=res.dual_residual,
                         iterations=res.iterations, history=res.history)


def eliminate_singleton_free(prob: SdpStandardForm) -> _FreeElimination | None:
    """Remove every free variable that is the only free variable of some row.

    Such a row pins the variable to an affine function of the matrix
    variables; substituting it everywhere else leaves a pure PSD problem,
    whose Newton system is positive definite instead of a saddle point.
    """
    if not prob.n_free:
        return None
    B = prob.B.tocsr()
    m = prob.n_constraints
    row_nnz = np.diff(B.indptr)
    a_nnz = np.zeros(m)
    for r, *_ in prob.A_entries:
        a_nnz += np.bincount(r, minlength=m)
    pivot = {}
    for r in np.flatnonzero(row_nnz == 1):
        k = int(B.indices[B.indptr[r]])
        val = float(B.data[B.indptr[r]])
        if val == 0.0 or a_nnz[r] == 0:
            continue
        best = pivot.get(k)
        # fewest matrix entries first (less fill), then largest pivot
        key = (a_nnz[r], -abs(val))
        if best is None or key < best[0]:
            pivot[k] = (key, int(r), val)
    if not pivot:
        return None
    elim = np.array(sorted(pivot), dtype=int)
    piv = np.array([pivot[k][1] for k in elim], dtype=int)
    D = np.array([pivot[k][2] for k in elim])
    keep_rows = np.ones(m, dtype=bool)
    keep_rows[piv] = False
    keep_free = np.setdiff1d(np.arange(prob.n_free), elim)

    # E[r, piv_k] = B[r, k] / D_k : row r -= E @ (pivot rows)
    Bk = B[:, elim].tocoo()
    E = sp.csr_matrix((Bk.data / D[Bk.col], (Bk.row, piv[Bk.col])), shape=(m, m))
    E = E[keep_rows]
    g = np.zeros(m)
    g[piv] = prob.c_free[elim] / D
    new_entries, new_C = [], []
    for n, (r, i, j, v), Ck in zip(prob.block_sizes, prob.A_entries, prob.C):
        T = sp.csr_matrix((v, (r, i * n + j)), shape=(m, n * n))
        Tn = (T[keep_rows] - E @ T).tocoo()
        Tn.sum_duplicates()
        nz = Tn.data != 0.0
        col = Tn.col[nz]
        new_entries.append((Tn.row[nz], col // n, col % n, Tn.data[nz]))
        w = np.asarray(T.T @ g).ravel().reshape(n, n)
        Wm = w + w.T - np.diag(np.diag(w))
        new_C.append(Ck - Wm)
    reduced = SdpStandardForm(
        block_sizes=list(prob.block_sizes), b=prob.b[keep_rows] - E @ prob.b,
        A_entries=new_entries, C=new_C, n_free=keep_free.size,
        B=B[keep_rows][:, keep_free], c_free=prob.c_free[keep_free],
        obj_offset=prob.obj_offset + float(g @ prob.b))
    return _FreeElimination(prob, reduced, elim, piv, D, keep_rows, keep_free)


def _trivial_result(prob: SdpStandardForm, status: str) -> SdpResult:
    return SdpResult(status=status, X=[np.zeros((n, n)) for n in prob.block_sizes],
                     y=np.zeros(prob.n_constraints),
                     S=[np.zeros((n, n)) for n in prob.block_sizes],
                     x_free=np.zeros(prob.n_free), primal_objective=math.nan,
                     dual_objective=math.nan, gap=math.nan, primal_residual=math.nan,
                     dual_residual=math.nan, iterations=0)


# -- plain-text sparse dump ------------------------------------------------
#
#   sdptxt 1
#   blocks <n_1> <n_2> ...
#   free <n_free>
#   constraints <m>
#   offset <value>
#   b <row> <value>                  nonzero right-hand sides
#   c <block> <i> <j> <value>        objective block entries, i <= j
#   cf <k> <value>                   free-variable costs
#   a <row> <block> <i> <j> <value>  constraint matrix entries, i <= j
#   af <row> <k> <value>             free-variable coefficients
#
# Indices are zero-based; lines starting with '#' are comments.

def write_sdp_text(prob: SdpStandardForm, fh: TextIO) -> None:
    w = fh.write
    w("sdptxt 1\n")
    w("blocks " + " ".join(str(n) for n in prob.block_sizes) + "\n")
    w(f"free {prob.n_free}\n")
    w(f"constraints {prob.n_constraints}\n")
    w(f"offset {float(prob.obj_offset)!r}\n")
    for i in np.flatnonzero(prob.b):
        w(f"b {i} {float(prob.b[i])!r}\n")
    for k, Ck in enumerate(prob.C):
        ii, jj = np.nonzero(np.triu(Ck))
        for i, j in zip(ii, jj):
            w(f"c {k} {i} {j} {float(Ck[i, j])!r}\n")
    for k in np.flatnonzero(prob.c_free):
        w(f"cf {k} {float(prob.c_free[k])!r}\n")
    for k, (r, i, j, v) in enumerate(prob.A_entries):
        for row, a, bb, val in zip(r, i, j, v):
            w(f"a {row} {k} {a} {bb} {float(val)!r}\n")
    Bc = prob.B.tocoo()
    for row, k, val in zip(Bc.row, Bc.col, Bc.data):
        w(f"af {row} {k} {float(val)!r}\n")


def read_sdp_text(fh: TextIO) -> SdpStandardForm:
    sizes: list[int] = []
    n_free = m = 0
    offset = 0.0
    b_items, c_items, cf_items, a_items, af_items = [], [], [], [], []
    header_seen = False
    for lineno, raw in enumerate(fh, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        key = tok[0]
        try:
            if key == "sdptxt":
                if tok[1] != "1":
                    raise ValueError(f"unsupported sdptxt version {tok[1]}")
                header_seen = True
            elif key == "blocks":
                sizes = [int(t) for t in tok[1:]]
            elif key == "free":
                n_free = int(tok[1])
            elif key == "constraints":
                m = int(tok[1])
            elif key == "offset":
                offset = float(tok[1])
            elif key == "b":
                b_items.append((int(tok[1]), float(tok[2])))
            elif key == "c":
                c_items.append((int(tok[1]), int(tok[2]), int(tok[3]), float(tok[4])))
            elif key == "cf":
                cf_items.append((int(tok[1]), float(tok[2])))
            elif key == "a":
                a_items.append((int(tok[1]), int(tok[2]), int(tok[3]), int(tok[4]), float(tok[5])))
            elif key == "af":
                af_items.append((int(tok[1]), int(tok[2]), float(tok[3])))
            else:
                raise ValueError(f"unknown record '{key}'")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if not header_seen:
        raise ValueError("missing 'sdptxt' header")
    b = np.zeros(m)
    for i, v in b_items:
        b[i] = v
    C = [np.zeros((n, n)) for n in sizes]
    for k, i, j, v in c_items:
        C[k][i, j] = v
        C[k][j, i] = v
    c_free = np.zeros(n_free)
    for k, v in cf_items:
        c_free[k] = v
    per_block: list[list[tuple]] = [[] for _ in sizes]
    for row, k, i, j, v in a_items:
        per_block[k].append((row, i, j, v))
    A_entries = []
    for items in per_block:
        arr = np.array(items, dtype=float).reshape(-1, 4)
        A_entries.append((arr[:, 0].astype(int), arr[:, 1].astype(int),
                          arr[:, 2].astype(int), arr[:, 3]))
    if af_items:
        arr = np.array(af_items)
        Bm = sp.csr_matrix((arr[:, 2], (arr[:, 0].astype(int), arr[:, 1].astype(int))),
                           shape=(m, n_free))
    else:
        Bm = sp.csr_matrix((m, n_free))
    return SdpStandardForm(block_sizes=sizes, b=b, A_entries=A_entries, C=C,
                           n_free=n_free, B=Bm, c_free=c_free, obj_offset=offset)
