"""Sum-of-squares programs over polynomials with affine decision coefficients.

A program owns a vector of scalar decision variables.  Polynomials whose
coefficients are affine in those variables (:class:`AffinePoly`) are
constrained to be sums of squares; each constraint becomes one Gram block
of a semidefinite program with one equality row per monomial.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from .polyalg import Monomial, Polynomial, grlex_key, monomial_basis
from .sdp import (DUAL_INFEASIBLE, INACCURATE, OPTIMAL, PRIMAL_INFEASIBLE, SdpResult,
                  SdpStandardForm, solve_sdp, write_sdp_text)

OPTIMAL_STATUS = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"

log = logging.getLogger(__name__)

EPS_PSD = 1e-7
EPS_EQ = 1e-6      # relative to the expression's term scale, see gram_residual


class StructuralInfeasibility(ValueError):
    """Raised when a coefficient row has no Gram or decision entries but a nonzero target."""


class AffinePoly:
    """``const + sum_k d_k * lin[k]`` with ``d_k`` scalar decision variables."""

    __slots__ = ("nvars", "const", "lin")

    def __init__(self, nvars: int, const: Polynomial | None = None,
                 lin: dict[int, Polynomial] | None = None):
        self.nvars = nvars
        self.const = const if const is not None else Polynomial.zero(nvars)
        self.lin = {k: p for k, p in (lin or {}).items() if not p.is_zero()}
        if self.const.nvars != nvars or any(p.nvars != nvars for p in self.lin.values()):
            raise ValueError("variable-count mismatch inside AffinePoly")

    @classmethod
    def lift(cls, p) -> "AffinePoly":
        if isinstance(p, AffinePoly):
            return p
        if isinstance(p, Polynomial):
            return cls(p.nvars, p)
        raise TypeError(f"cannot lift {type(p).__name__} to AffinePoly")

    def _other(self, other) -> "AffinePoly":
        if isinstance(other, (int, float, np.floating)):
            return AffinePoly(self.nvars, Polynomial.constant(self.nvars, float(other)))
        other = AffinePoly.lift(other)
        if other.nvars != self.nvars:
            raise ValueError(f"variable-count mismatch: {self.nvars} vs {other.nvars}")
        return other

    def __add__(self, other) -> "AffinePoly":
        other = self._other(other)
        lin = dict(self.lin)
        for k, p in other.lin.items():
            lin[k] = lin[k] + p if k in lin else p
        return AffinePoly(self.nvars, self.const + other.const, lin)

    __radd__ = __add__

    def __neg__(self) -> "AffinePoly":
        return AffinePoly(self.nvars, -self.const, {k: -p for k, p in self.lin.items()})

    def __sub__(self, other) -> "AffinePoly":
        return self + (-self._other(other))

    def __rsub__(self, other) -> "AffinePoly":
        return (-self) + other

    def __mul__(self, other) -> "AffinePoly":
        if isinstance(other, AffinePoly):
            if other.lin and self.lin:
                raise TypeError("product of two decision-dependent polynomials is not affine")
            if self.lin:
                other = other.const
            else:
                return other * self.const
        if isinstance(other, (int, float, np.floating)):
            other = float(other)
            return AffinePoly(self.nvars, self.const.scale(other),
                              {k: p.scale(other) for k, p in self.lin.items()})
        if isinstance(other, Polynomial):
            return AffinePoly(self.nvars, self.const * other,
                              {k: p * other for k, p in self.lin.items()})
        return NotImplemented

    __rmul__ = __mul__

    def diff(self, i: int) -> "AffinePoly":
        return AffinePoly(self.nvars, self.const.diff(i),
                          {k: p.diff(i) for k, p in self.lin.items()})

    def gradient(self, wrt: Sequence[int] | None = None) -> list["AffinePoly"]:
        idx = range(self.nvars) if wrt is None else wrt
        return [self.diff(i) for i in idx]

    def extend(self, nvars: int) -> "AffinePoly":
        return AffinePoly(nvars, self.const.extend(nvars),
                          {k: p.extend(nvars) for k, p in self.lin.items()})

    def components(self) -> list[Polynomial]:
        return [self.const, *self.lin.values()]

    def support(self) -> set[Monomial]:
        out: set[Monomial] = set()
        for p in self.components():
            out.update(p.terms)
        return out

    def degree(self) -> int:
        return max((p.degree() for p in self.components()), default=-1)

    def min_degree(self) -> int:
        return min((sum(m) for m in self.support()), default=0)

    def decision_vars(self) -> list[int]:
        return sorted(self.lin)

    def value(self, d: np.ndarray) -> Polynomial:
        out = self.const
        for k, p in self.lin.items():
            out = out + p.scale(float(d[k]))
        return out

    def __repr__(self) -> str:
        return f"AffinePoly(const={self.const.to_string()}, vars={self.decision_vars()})"


@dataclass
class DecisionPoly:
    """Polynomial ``sum_i c_i * basis_i`` with fresh decision variables ``c_i``."""

    basis: list[Monomial]
    var_ids: list[int]
    expr: AffinePoly

    def value(self, d: np.ndarray) -> Polynomial:
        return self.expr.value(d)

    def coefficients(self, d: np.ndarray) -> np.ndarray:
        return np.asarray([d[k] for k in self.var_ids])


@dataclass
class SosConstraint:
    expr: AffinePoly
    gram_basis: list[Monomial]
    name: str = ""


@dataclass
class SosSolution:
    status: str
    values: np.ndarray
    grams: list[np.ndarray]
    objective: float
    sdp: SdpResult | None = None
    program: "SosProgram | None" = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL_STATUS

    def value(self, expr) -> Polynomial:
        if isinstance(expr, DecisionPoly):
            return expr.value(self.values)
        return AffinePoly.lift(expr).value(self.values)

    def gram_min_eig(self, cid: int) -> float:
        G = self.grams[cid]
        return float(np.linalg.eigvalsh(G)[0]) if G.size else 0.0

    def gram_residual(self, cid: int, relative: bool = False) -> float:
        """Max coefficient gap between ``z^T G z`` and the substituted expression
        (both in the program's scaled indeterminates).  With ``relative`` the
        gap is divided by ``max(1, term scale)``, the largest sum of absolute
        contributions to any one coefficient, so cancellation inside the
        expression is not charged to the certificate."""
        con = self.program.constraints[cid]
        recon = gram_polynomial(con.gram_basis, self.grams[cid], con.expr.nvars)
        expr = self.program.scaled_expr(con.expr)
        gap = (recon - expr.value(self.values)).max_abs_coeff()
        if not relative:
            return gap
        mag: dict = {}
        for m, c in expr.const.terms.items():
            mag[m] = mag.get(m, 0.0) + abs(c)
        for k, p in expr.lin.items():
            dk = abs(float(self.values[k]))
            for m, c in p.terms.items():
                mag[m] = mag.get(m, 0.0) + abs(c) * dk
        return gap / max([1.0] + list(mag.values()))

def gram_polynomial(basis: Sequence[Monomial], G: np.ndarray, nvars: int) -> Polynomial:
    terms: dict[Monomial, float] = {}
    for a, za in enumerate(basis):
        for b, zb in enumerate(basis):
            m = tuple(x + y for x, y in zip(za, zb))
            terms[m] = terms.get(m, 0.0) + float(G[a, b])
    return Polynomial(nvars, terms)


def half_degree_basis(expr: AffinePoly, indeterminates: Sequence[int]) -> list[Monomial]:
    """All monomials in the indeterminates between half the minimum and half
    the (even-rounded) maximum degree of the expression."""
    deg = expr.degree()
    if deg < 0:
        return []
    hi = (deg + 1) // 2
    lo = expr.min_degree() // 2
    return monomial_basis(expr.nvars, lo, hi, variables=indeterminates)


def newton_prune(basis: Sequence[Monomial], support: set[Monomial]) -> list[Monomial]:
    """Keep monomials ``z`` with ``2z`` in the convex hull of ``support``."""
    if not support:
        return []
    pts = np.array(sorted(support), dtype=float)
    npts = pts.shape[0]
    A_eq = np.vstack([pts.T, np.ones((1, npts))])
    kept = []
    for z in basis:
        target = np.append(2.0 * np.asarray(z, dtype=float), 1.0)
        res = scipy.optimize.linprog(np.zeros(npts), A_eq=A_eq, b_eq=target,
                                     bounds=(0, None), method="highs")
        if res.status == 0:
            kept.append(z)
    return kept


class SosProgram:
    """Mutable builder for an SOS program over ``nvars`` indeterminates.

    ``scale`` optionally rescales the indeterminates, ``x = scale * x_hat``,
    before the Gram reduction.  SOS membership is unchanged by a diagonal
    change of variables, but the SDP is far better conditioned when
    ``x_hat`` ranges over roughly unit intervals.  Gram matrices in the
    solution refer to ``x_hat``.
    """

    def __init__(self, nvars: int, scale: Sequence[float] | None = None):
        self.nvars = nvars
        if scale is None:
            scale = np.ones(nvars)
        self.scale = np.asarray(scale, dtype=float).ravel()
        if self.scale.size != nvars or np.any(self.scale <= 0):
            raise ValueError("scale needs one positive entry per indeterminate")
        self.n_decision = 0
        self.constraints: list[SosConstraint] = []
        self.objective: AffinePoly | None = None

    # -- decision variables ------------------------------------------------
    def _fresh(self, count: int) -> list[int]:
        ids = list(range(self.n_decision, self.n_decision + count))
        self.n_decision += count
        return ids

    def declare_poly(self, basis: Sequence[Monomial]) -> DecisionPoly:
        basis = [tuple(m) for m in basis]
        if not basis:
            raise ValueError("decision polynomial needs a non-empty basis")
        if len(set(basis)) != len(basis):
            raise ValueError("duplicate monomials in decision basis")
        if any(len(m) != self.nvars for m in basis):
            raise ValueError("basis monomials must use the program's variable count")
        ids = self._fresh(len(basis))
        lin = {k: Polynomial(self.nvars, {m: 1.0}) for k, m in zip(ids, basis)}
        return DecisionPoly(basis, ids, AffinePoly(self.nvars, None, lin))

    def declare_scalar(self) -> AffinePoly:
        (k,) = self._fresh(1)
        return AffinePoly(self.nvars, None, {k: Polynomial.constant(self.nvars, 1.0)})

    def declare_sos_poly(self, gram_basis: Sequence[Monomial], name: str = "") -> DecisionPoly:
        """Decision polynomial over all products of ``gram_basis``, constrained SOS
        with exactly that Gram basis (used for multipliers)."""
        prods = sorted({tuple(x + y for x, y in zip(a, b))
                        for a in gram_basis for b in gram_basis}, key=grlex_key)
        p = self.declare_poly(prods)
        self.add_sos_constraint(p.expr, gram_basis=list(gram_basis), name=name)
        return p

    # -- constraints and objective ----------------------------------------
    def add_sos_constraint(self, expr, indeterminates: Sequence[int] | None = None,
                           gram_basis: Sequence[Monomial] | None = None,
                           newton: bool = False, name: str = "") -> int:
        expr = AffinePoly.lift(expr)
        if expr.nvars != self.nvars:
            raise ValueError("constraint uses a different variable count")
        if any(k >= self.n_decision for k in expr.lin):
            raise ValueError("expression refers to undeclared decision variables")
        if gram_basis is None:
            ind = range(self.nvars) if indeterminates is None else indeterminates
            gram_basis = half_degree_basis(expr, list(ind))
            if newton:
                gram_basis = newton_prune(gram_basis, expr.support())
        gram_basis = [tuple(m) for m in gram_basis]
        self.constraints.append(SosConstraint(expr, gram_basis, name))
        return len(self.constraints) - 1

    def set_objective(self, expr, sense: str = "minimize") -> None:
        expr = AffinePoly.lift(expr) if not isinstance(expr, (int, float)) else \
            AffinePoly(self.nvars, Polynomial.constant(self.nvars, float(expr)))
        if expr.degree() > 0:
            raise ValueError("objective must be a scalar (degree-0) affine function")
        if sense == "maximize":
            expr = -expr
        elif sense != "minimize":
            raise ValueError("sense must be 'minimize' or 'maximize'")
        self.objective = expr

    def objective_coefficients(self) -> tuple[np.ndarray, float]:
        c = np.zeros(self.n_decision)
        if self.objective is None:
            return c, 0.0
        zero = (0,) * self.nvars
        for k, p in self.objective.lin.items():
            c[k] = p.coefficient(zero)
        return c, self.objective.const.coefficient(zero)

    # -- translation ---------------------------------------------------------
    def scaled_expr(self, expr: AffinePoly) -> AffinePoly:
        """``expr`` written in the scaled indeterminates."""
        if np.all(self.scale == 1.0):
            return expr
        logd = np.log(self.scale)

        def sc(p: Polynomial) -> Polynomial:
            return Polynomial(p.nvars, {m: c * math.exp(float(np.dot(m, logd)))
                                        for m, c in p.terms.items()})
        return AffinePoly(expr.nvars, sc(expr.const), {k: sc(p) for k, p in expr.lin.items()})

    def to_sdp(self) -> SdpStandardForm:
        if not self.constraints:
            raise ValueError("program has no constraints")
        b_vals: list[float] = []
        A_entries = []
        B_rows, B_cols, B_vals = [], [], []
        row0 = 0
        for con in self.constraints:
            basis = con.gram_basis
            expr = self.scaled_expr(con.expr)
            rows: dict[Monomial, int] = {}
            rr, ii, jj = [], [], []
            for a in range(len(basis)):
                za = basis[a]
                for bidx in range(a, len(basis)):
                    mono = tuple(x + y for x, y in zip(za, basis[bidx]))
                    r = rows.setdefault(mono, len(rows))
                    rr.append(r)
                    ii.append(a)
                    jj.append(bidx)
            for mono in sorted(expr.support() - rows.keys(), key=grlex_key):
                rows[mono] = len(rows)
            rhs = np.zeros(len(rows))
            for mono, c in expr.const.terms.items():
                rhs[rows[mono]] = c
            has_var = np.zeros(len(rows), dtype=bool)
            has_var[np.asarray(rr, dtype=int)] = True
            for k, p in expr.lin.items():
                for mono, c in p.terms.items():
                    r = rows[mono]
                    B_rows.append(row0 + r)
                    B_cols.append(k)
                    B_vals.append(-c)
                    has_var[r] = True
            bad = np.flatnonzero(~has_var & (rhs != 0))
            if bad.size:
                inv = {r: mono for mono, r in rows.items()}
                raise StructuralInfeasibility(
                    f"constraint '{con.name}': monomial {inv[int(bad[0])]} cannot be matched")
            A_entries.append((np.asarray(rr, dtype=int) + row0, np.asarray(ii, dtype=int),
                              np.asarray(jj, dtype=int), np.ones(len(rr))))
            b_vals.extend(rhs.tolist())
            row0 += len(rows)
        m = row0
        B = sp.csr_matrix((B_vals, (B_rows, B_cols)), shape=(m, self.n_decision))
        c_free, offset = self.objective_coefficients()
        sizes = [len(c.gram_basis) for c in self.constraints]
        return SdpStandardForm(block_sizes=sizes, b=np.asarray(b_vals), A_entries=A_entries,
                               C=[np.zeros((n, n)) for n in sizes], n_free=self.n_decision,
                               B=B, c_free=c_free, obj_offset=offset)

    def dump_sdp(self, fh: TextIO) -> None:
        write_sdp_text(self.to_sdp(), fh)

    def solve(self, tol_gap: float = 1e-7, tol_feas: float = 1e-7, max_iter: int = 200,
              verbose: bool = False) -> SosSolution:
        try:
            prob = self.to_sdp()
        except StructuralInfeasibility:
            return SosSolution(INFEASIBLE, np.full(self.n_decision, np.nan),
                               [np.zeros((len(c.gram_basis),) * 2) for c in self.constraints],
                               math.nan, None, self)
        res = solve_sdp(prob, tol_gap=tol_gap, tol_feas=tol_feas, max_iter=max_iter,
                        verbose=verbose)
        # an inaccurate solve is accepted only if the certificate checks below pass
        status = {OPTIMAL: OPTIMAL_STATUS, INACCURATE: OPTIMAL_STATUS,
                  PRIMAL_INFEASIBLE: INFEASIBLE, DUAL_INFEASIBLE: UNBOUNDED}.get(res.status, NUMERICAL_FAILURE)
        sol = SosSolution(status, res.x_free, res.X, res.primal_objective, res, self)
        if sol.optimal:
            for cid in range(len(self.constraints)):
                eig, gap = sol.gram_min_eig(cid), sol.gram_residual(cid, relative=True)
                if eig < -EPS_PSD or gap > EPS_EQ:
                    log.debug("certificate check failed on %s: min eig %.2e, residual %.2e",
                              self.constraints[cid].name or cid, eig, gap)
                    sol.status = NUMERICAL_FAILURE
                    break
        return sol
