"""Policy-iteration synthesis of H-infinity controllers with SOS certificates.

The outer loop minimises the squared attenuation level for the current
policy; the inner loop alternates policy evaluation (tightest value function
that keeps the negative Hamiltonian nonnegative) and policy improvement
``u = -1/2 R^-1 g^T grad V``.

Polynomials in the Hamiltonian live in ``nx + 1`` variables: the lumped state
followed by the scalar disturbance ``w`` (index ``nx``).
"""

from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .polyalg import Box, Monomial, Polynomial, box_moment, grlex_key, monomial_basis
from .sosprog import AffinePoly, DecisionPoly, SosProgram, SosSolution
from .traffic import MixedTrafficModel, PerformanceWeights, spacing_index

log = logging.getLogger(__name__)

ARTIFACT_FORMAT = "platoon-hinf-controller"
ARTIFACT_VERSION = 1
GAMMA_SQ_FLOOR = 1e-8
GAP_TOL = 1e-9


class LearnerError(RuntimeError):
    """Solver failure inside the learner; carries the log collected so far."""

    def __init__(self, msg: str, log_: "IterationLog | None" = None, status: str = ""):
        super().__init__(msg)
        self.log = log_
        self.status = status


# -- value functions and policies ------------------------------------------------

@dataclass
class ValueFunction:
    basis: list[Monomial]
    coeffs: np.ndarray

    def __post_init__(self):
        self.basis = [tuple(m) for m in self.basis]
        self.coeffs = np.asarray(self.coeffs, dtype=float).ravel()
        if len(self.basis) != self.coeffs.size:
            raise ValueError("coefficient vector does not match the basis")
        if any(sum(m) == 0 for m in self.basis):
            raise ValueError("value-function basis must not contain the constant monomial")

    @property
    def nvars(self) -> int:
        return len(self.basis[0])

    @property
    def poly(self) -> Polynomial:
        return Polynomial(self.nvars, dict(zip(self.basis, self.coeffs.tolist())))

    def __call__(self, x) -> float:
        return float(self.evaluate_many(np.atleast_2d(x))[0])

    def evaluate_many(self, X: np.ndarray) -> np.ndarray:
        E = np.asarray(self.basis, dtype=float)
        return np.prod(np.asarray(X, dtype=float)[:, None, :] ** E[None], axis=2) @ self.coeffs

    def mean_over(self, box: Box) -> float:
        return float(sum(c * box_moment(m, box) for m, c in zip(self.basis, self.coeffs))
                     / box.volume())


class Controller:
    """State feedback ``u_j = p_j(x)`` with polynomial components and ``u(0) = 0``."""

    def __init__(self, components: Sequence[Polynomial]):
        self.components = list(components)
        if not self.components:
            raise ValueError("controller needs at least one component")
        nv = self.components[0].nvars
        if any(p.nvars != nv for p in self.components):
            raise ValueError("controller components disagree on the variable count")
        if any(p.constant_term() != 0.0 for p in self.components):
            raise ValueError("controller must vanish at the origin")
        self.nvars = nv
        monos = sorted({m for p in self.components for m in p.terms}, key=grlex_key)
        self._E = np.asarray(monos, dtype=float).reshape(len(monos), nv)
        self._C = np.array([[p.coefficient(m) for m in monos] for p in self.components])

    @classmethod
    def linear(cls, nvars: int, gains: Sequence[dict[int, float]]) -> "Controller":
        comps = []
        for row in gains:
            comps.append(Polynomial(nvars, {tuple(int(j == i) for j in range(nvars)): float(c)
                                            for i, c in row.items()}))
        return cls(comps)

    @property
    def m(self) -> int:
        return len(self.components)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._E.shape[0] == 0:
            return np.zeros(self.m)
        return self._C @ np.prod(x[None, :] ** self._E, axis=1)

    def degree(self) -> int:
        return max(p.degree() for p in self.components)


def initial_controller(model: MixedTrafficModel, k_s: float = 0.5, k_v: float = -1.0) -> Controller:
    """``u_j = k_s * s~_l + k_v * v~_l`` for each CAV ``l``."""
    gains = [{spacing_index(l): k_s, spacing_index(l) + 1: k_v} for l in model.fleet.cav_indices]
    return Controller.linear(model.nx, gains)


@dataclass
class AttenuationLevel:
    gamma_sq: float

    def __post_init__(self):
        if not self.gamma_sq > 0:
            raise ValueError("gamma_sq must be positive")

    @property
    def gamma(self) -> float:
        return math.sqrt(self.gamma_sq)


# -- configuration ---------------------------------------------------------------

@dataclass
class Schedule:
    i_max: int = 20
    k_max: int = 15
    tol_inner: float = 1e-4       # relative objective decrease
    tol_outer: float = 1e-3       # absolute decrease of gamma
    gamma_backoff: float = 1e-3   # relative slack on gamma^2 before policy evaluation
    fixed_gamma: float | None = None

    def __post_init__(self):
        if self.i_max < 1:
            raise ValueError("schedule needs at least one outer iteration")
        if self.k_max < 1:
            raise ValueError("schedule needs at least one inner iteration")
        if self.tol_inner < 0 or self.tol_outer < 0 or self.gamma_backoff < 0:
            raise ValueError("tolerances must be non-negative")
        if self.fixed_gamma is not None and not self.fixed_gamma > 0:
            raise ValueError("fixed gamma must be positive")


@dataclass
class LearnerSetup:
    """Everything the SOS programs need besides the policy and attenuation level.

    ``localize`` selects whether the Hamiltonian constraint is certified on
    the strip ``|s~_i| <= b`` of every HDV spacing (S-procedure) or globally;
    ``None`` means "only when the model is nonlinear".
    """

    model: MixedTrafficModel
    weights: PerformanceWeights
    box: Box
    value_basis: list[Monomial]
    localize: bool | None = None
    spacing_bound: float | None = None
    tol_gap: float = 1e-7
    tol_feas: float = 1e-8
    max_iter: int = 200
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        nx = self.model.nx
        self.value_basis = [tuple(m) for m in self.value_basis]
        if not self.value_basis:
            raise ValueError("value basis is empty")
        if any(len(m) != nx for m in self.value_basis):
            raise ValueError("value basis must be over the lumped state")
        if any(sum(m) == 0 for m in self.value_basis):
            raise ValueError("value basis must not contain the constant monomial")
        if self.box.dim != nx:
            raise ValueError("box dimension differs from the state dimension")
        if self.localize is None:
            self.localize = self.model.fit_degree > 1 and bool(self.model.fleet.hdv_indices)
        if self.spacing_bound is None:
            self.spacing_bound = self.model.spacing_bound

    @property
    def nx(self) -> int:
        return self.model.nx

    @property
    def nv(self) -> int:
        return self.model.nx + 1

    @property
    def value_degree(self) -> int:
        return max(sum(m) for m in self.value_basis)

    def _half_base(self) -> list[Monomial]:
        return monomial_basis(self.nv, 1, max(1, (self.value_degree + 1) // 2))

    def variable_scale(self) -> np.ndarray:
        """Box half-widths for the state; the largest of them for ``w``."""
        half = 0.5 * (np.asarray(self.box.upper) - np.asarray(self.box.lower))
        return np.append(half, half.max())

    def localized_spacings(self) -> list[int]:
        return [spacing_index(i) for i in self.model.fleet.hdv_indices] if self.localize else []

    def hamiltonian_basis(self) -> list[Monomial] | None:
        """Gram basis for the Hamiltonian constraint; ``None`` means the default
        half-degree basis."""
        if not self.localize:
            return None
        if "ham" not in self._cache:
            K = max(0, math.ceil((self.model.fit_degree - 1) / 2))
            self._cache["ham"] = _strip_basis(self._half_base(), self.localized_spacings(), K)
        return self._cache["ham"]

    def multiplier_basis(self, idx: int) -> list[Monomial]:
        key = ("mult", idx)
        if key not in self._cache:
            K = max(0, math.ceil((self.model.fit_degree - 1) / 2))
            self._cache[key] = _strip_basis(self._half_base(), [idx], K - 1)
        return self._cache[key]


def _strip_basis(base: list[Monomial], idxs: list[int], K: int) -> list[Monomial]:
    out = set(base)
    for idx in idxs:
        for a in range(1, K + 1):
            for m in base:
                e = list(m)
                e[idx] += a
                out.add(tuple(e))
    return sorted(out, key=grlex_key)


def default_box(n: int, spacing: float = 4.0, velocity: float = 5.0) -> Box:
    return Box.symmetric([spacing, velocity] * n)


def default_value_basis(nx: int, deg_min: int = 2, deg_max: int = 4) -> list[Monomial]:
    return monomial_basis(nx, deg_min, deg_max)


# -- Hamiltonian and policy update ----------------------------------------------

def _as_affine(V, nv: int) -> AffinePoly:
    if isinstance(V, ValueFunction):
        V = V.poly
    if isinstance(V, DecisionPoly):
        V = V.expr
    V = AffinePoly.lift(V)
    return V.extend(nv) if V.nvars < nv else V


def negative_hamiltonian(V, u: Controller, gamma_sq, model: MixedTrafficModel,
                         weights: PerformanceWeights):
    """``-grad V . (f + g u + k w) - x'Qx - u'Ru + gamma^2 w^2`` in ``(x, w)``.

    ``V`` and ``gamma_sq`` may depend affinely on decision variables; the
    result is then an :class:`AffinePoly`, otherwise a :class:`Polynomial`.
    """
    nx, nv = model.nx, model.nx + 1
    if u.nvars != nx or u.m != model.m:
        raise ValueError("controller does not match the model dimensions")
    Va = _as_affine(V, nv)
    W = Polynomial.variable(nv, nx)
    uc = [p.extend(nv) for p in u.components]
    L = AffinePoly(nv)
    for j in range(nx):
        dj = model.f[j].extend(nv)
        for c in range(model.m):
            if model.g[j, c] != 0.0:
                dj = dj + uc[c].scale(model.g[j, c])
        if model.k[j] != 0.0:
            dj = dj + W.scale(model.k[j])
        dV = Va.diff(j)
        if dV.const.is_zero() and not dV.lin:
            continue
        L = L - dV * dj
    Q, R = weights.Q(model.n), weights.R(model.m)
    X = [Polynomial.variable(nv, j) for j in range(nx)]
    cost = Polynomial.zero(nv)
    for j in range(nx):
        cost = cost + (X[j] * X[j]).scale(Q[j, j])
    for a in range(model.m):
        for b in range(model.m):
            if R[a, b] != 0.0:
                cost = cost + (uc[a] * uc[b]).scale(R[a, b])
    L = L - cost
    if isinstance(gamma_sq, (int, float, np.floating)):
        L = L + (W * W).scale(float(gamma_sq))
    else:
        L = L + AffinePoly.lift(gamma_sq) * (W * W)
    return L.const if not L.lin else L


def policy_improvement(V, model: MixedTrafficModel, weights: PerformanceWeights) -> Controller:
    """``u = -1/2 R^-1 g^T grad V`` (exact, since ``g`` is constant)."""
    P = V.poly if isinstance(V, ValueFunction) else V
    nx = model.nx
    grad = [P.diff(j) for j in range(nx)]
    Rinv = np.linalg.inv(weights.R(model.m))
    gt = [Polynomial.zero(nx) for _ in range(model.m)]
    for c in range(model.m):
        for j in range(nx):
            if model.g[j, c] != 0.0:
                gt[c] = gt[c] + grad[j].scale(model.g[j, c])
    comps = []
    for a in range(model.m):
        p = Polynomial.zero(nx)
        for c in range(model.m):
            if Rinv[a, c] != 0.0:
                p = p + gt[c].scale(-0.5 * Rinv[a, c])
        comps.append(Polynomial(nx, {m: v for m, v in p.terms.items() if sum(m) > 0}))
    return Controller(comps)


def gap_identity_check(V, u_new: Controller, u_old: Controller, gamma_sq: float,
                       model: MixedTrafficModel, weights: PerformanceWeights) -> float:
    """Coefficient norm of ``L(V,u_new) - L(V,u_old) - du' R du``."""
    nv = model.nx + 1
    L_new = negative_hamiltonian(V, u_new, gamma_sq, model, weights)
    L_old = negative_hamiltonian(V, u_old, gamma_sq, model, weights)
    R = weights.R(model.m)
    du = [(a - b).extend(nv) for a, b in zip(u_new.components, u_old.components)]
    quad = Polynomial.zero(nv)
    for a in range(model.m):
        for b in range(model.m):
            if R[a, b] != 0.0:
                quad = quad + (du[a] * du[b]).scale(R[a, b])
    return (L_new - L_old - quad).max_abs_coeff()


# -- SOS programs ------------------------------------------------------------------

def _add_hamiltonian_constraint(prog: SosProgram, setup: LearnerSetup, L, name: str) -> None:
    L = AffinePoly.lift(L)
    b2 = setup.spacing_bound ** 2
    nv = setup.nv
    for idx in setup.localized_spacings():
        sig = prog.declare_sos_poly(setup.multiplier_basis(idx), name=f"sigma[{idx}]")
        S = Polynomial.variable(nv, idx)
        L = L - sig.expr * (Polynomial.constant(nv, b2) - S * S)
    prog.add_sos_constraint(L, gram_basis=setup.hamiltonian_basis(), name=name)


def _value_mean_objective(V: DecisionPoly, box: Box, nv: int) -> AffinePoly:
    vol = box.volume()
    lin = {k: Polynomial.constant(nv, box_moment(m[:box.dim], box) / vol)
           for k, m in zip(V.var_ids, V.basis)}
    return AffinePoly(nv, None, lin)


def _declare_value(prog: SosProgram, setup: LearnerSetup) -> DecisionPoly:
    return prog.declare_poly([tuple(m) + (0,) for m in setup.value_basis])


def _value_from(sol: SosSolution, Vd: DecisionPoly, setup: LearnerSetup) -> ValueFunction:
    return ValueFunction(setup.value_basis, Vd.coefficients(sol.values))


def _solve(prog: SosProgram, setup: LearnerSetup, verbose: bool = False) -> SosSolution:
    return prog.solve(tol_gap=setup.tol_gap, tol_feas=setup.tol_feas,
                      max_iter=setup.max_iter, verbose=verbose)


def optimize_attenuation(setup: LearnerSetup, u_prev: Controller,
                         verbose: bool = False) -> tuple[AttenuationLevel, ValueFunction, SosSolution]:
    """Smallest certifiable ``gamma^2`` for ``u_prev`` with ``L >= 0`` and ``V >= 0``."""
    prog = SosProgram(setup.nv, setup.variable_scale())
    Vd = _declare_value(prog, setup)
    gs = prog.declare_scalar()
    L = negative_hamiltonian(Vd, u_prev, gs, setup.model, setup.weights)
    _add_hamiltonian_constraint(prog, setup, L, "hamiltonian")
    prog.add_sos_constraint(Vd.expr, indeterminates=range(setup.nx), name="value")
    prog.add_sos_constraint(gs - GAMMA_SQ_FLOOR, name="gamma-floor")
    prog.set_objective(gs)
    sol = _solve(prog, setup, verbose)
    if not sol.optimal:
        raise LearnerError(f"attenuation optimisation failed ({sol.status}); "
                           "the controller may not be admissible", status=sol.status)
    gamma_sq = max(float(sol.value(gs).constant_term()), GAMMA_SQ_FLOOR)
    return AttenuationLevel(gamma_sq), _value_from(sol, Vd, setup), sol


def policy_evaluation(setup: LearnerSetup, u_prev: Controller, gamma: AttenuationLevel,
                      V_prev: ValueFunction | None,
                      verbose: bool = False) -> tuple[ValueFunction, SosSolution]:
    """Minimise the mean of ``V`` over the box with ``L(V, u_prev) >= 0``,
    ``V_prev - V >= 0`` (when given) and ``V >= 0``."""
    prog = SosProgram(setup.nv, setup.variable_scale())
    Vd = _declare_value(prog, setup)
    L = negative_hamiltonian(Vd, u_prev, gamma.gamma_sq, setup.model, setup.weights)
    _add_hamiltonian_constraint(prog, setup, L, "hamiltonian")
    if V_prev is not None:
        prev = _as_affine(V_prev, setup.nv)
        prog.add_sos_constraint(prev - Vd.expr, indeterminates=range(setup.nx), name="decrease")
    prog.add_sos_constraint(Vd.expr, indeterminates=range(setup.nx), name="value")
    prog.set_objective(_value_mean_objective(Vd, setup.box, setup.nv))
    sol = _solve(prog, setup, verbose)
    if not sol.optimal:
        raise LearnerError(f"policy evaluation failed ({sol.status})", status=sol.status)
    return _value_from(sol, Vd, setup), sol


def certify(setup: LearnerSetup, V: ValueFunction, u: Controller, gamma_sq: float) -> str:
    """Re-check the Hamiltonian certificate of a fixed triple; returns the SOS status."""
    prog = SosProgram(setup.nv, setup.variable_scale())
    L = negative_hamiltonian(V, u, gamma_sq, setup.model, setup.weights)
    _add_hamiltonian_constraint(prog, setup, L, "hamiltonian")
    return _solve(prog, setup).status


# -- the full algorithm ------------------------------------------------------------

@dataclass
class IterationRecord:
    outer: int
    inner: int          # 0 for the attenuation step
    phase: str          # "attenuation" | "evaluation"
    gamma_sq: float
    objective: float    # mean of V over the box
    status: str
    gap_residual: float
    sdp_iterations: int
    seconds: float

    @property
    def gamma(self) -> float:
        return math.sqrt(self.gamma_sq)


@dataclass
class Artifact:
    """Certified triple after an outer iteration: ``L(V, u, gamma) >= 0``."""

    value: ValueFunction
    controller: Controller
    gamma: AttenuationLevel
    outer: int
    inner: int
    fingerprint: str = ""


@dataclass
class IterationLog:
    records: list[IterationRecord] = field(default_factory=list)
    artifacts: list[Artifact] = field(default_factory=list)
    controllers: list[Controller] = field(default_factory=list)

    def gamma_series(self) -> list[float]:
        return [a.gamma.gamma for a in self.artifacts]

    def inner_objectives(self, outer: int) -> list[float]:
        return [r.objective for r in self.records if r.outer == outer and r.phase == "evaluation"]

    def max_gap_residual(self) -> float:
        return max((r.gap_residual for r in self.records if r.phase == "evaluation"), default=0.0)

    def write_csv(self, fh: TextIO) -> None:
        fh.write("outer,inner,phase,gamma_sq,gamma,objective,status,gap_residual,sdp_iterations,seconds\n")
        for r in self.records:
            fh.write(f"{r.outer},{r.inner},{r.phase},{r.gamma_sq:.12g},{r.gamma:.12g},"
                     f"{r.objective:.12g},{r.status},{r.gap_residual:.3e},{r.sdp_iterations},"
                     f"{r.seconds:.3f}\n")


def run(setup: LearnerSetup, u0: Controller, schedule: Schedule | None = None,
        verbose: bool = False) -> tuple[Controller, AttenuationLevel, IterationLog]:
    sched = schedule or Schedule()
    model, weights = setup.model, setup.weights
    out = IterationLog()
    fp = model.fingerprint()
    u = u0
    prev_gs = math.inf
    for i in range(1, sched.i_max + 1):
        t0 = time.perf_counter()
        if sched.fixed_gamma is not None:
            gs = sched.fixed_gamma ** 2
            V_prev = None
            out.records.append(IterationRecord(i, 0, "attenuation", gs, math.nan, "fixed", 0.0, 0, 0.0))
        else:
            try:
                level, V_prev, sol = optimize_attenuation(setup, u, verbose)
            except LearnerError as e:
                e.log = out
                raise
            # back off slightly so the evaluation problem has an interior
            gs = min(level.gamma_sq * (1.0 + sched.gamma_backoff), prev_gs)
            out.records.append(IterationRecord(i, 0, "attenuation", gs, V_prev.mean_over(setup.box),
                                               sol.status, 0.0, sol.sdp.iterations,
                                               time.perf_counter() - t0))
        gamma = AttenuationLevel(gs)
        log.info("outer %d: gamma = %.6g", i, gamma.gamma)
        J_prev = math.inf
        k = 0
        for k in range(1, sched.k_max + 1):
            t0 = time.perf_counter()
            try:
                V, sol = policy_evaluation(setup, u, gamma, V_prev, verbose)
            except LearnerError as e:
                e.log = out
                raise
            u_new = policy_improvement(V, model, weights)
            gap = gap_identity_check(V, u_new, u, gs, model, weights)
            J = V.mean_over(setup.box)
            out.records.append(IterationRecord(i, k, "evaluation", gs, J, sol.status, gap,
                                               sol.sdp.iterations, time.perf_counter() - t0))
            log.info("  inner %d: mean V = %.8g, gap residual %.2e", k, J, gap)
            u, V_prev = u_new, V
            out.controllers.append(u)
            if math.isfinite(J_prev) and (J_prev - J) <= sched.tol_inner * abs(J_prev):
                break
            J_prev = J
        out.artifacts.append(Artifact(V_prev, u, gamma, i, k, fp))
        if sched.fixed_gamma is not None:
            break
        if math.isfinite(prev_gs) and math.sqrt(prev_gs) - gamma.gamma < sched.tol_outer:
            break
        prev_gs = gs
    return u, AttenuationLevel(out.artifacts[-1].gamma.gamma_sq), out


# -- artifact serialisation -----------------------------------------------------

def _write_poly(fh: TextIO, p: Polynomial) -> None:
    for m in sorted(p.terms, key=grlex_key):
        fh.write(" ".join(str(e) for e in m) + f" {p.terms[m]!r}\n")


def write_artifact(art: Artifact, fh: TextIO) -> None:
    """Versioned plain-text controller artifact.

    Layout: header lines ``key value``, then ``value <nterms>`` followed by
    one ``exponents... coeff`` line per term of V, then for every input
    ``control <j> <nterms>`` with the same term lines, then ``end``.
    """
    V = art.value.poly
    fh.write(f"# platoon_hinf controller artifact\n{ARTIFACT_FORMAT} {ARTIFACT_VERSION}\n")
    fh.write(f"fingerprint {art.fingerprint}\nnvars {V.nvars}\ninputs {art.controller.m}\n")
    fh.write(f"outer {art.outer}\ninner {art.inner}\n")
    fh.write(f"gamma_sq {float(art.gamma.gamma_sq)!r}\ngamma {float(art.gamma.gamma)!r}\n")
    fh.write(f"value {len(art.value.basis)}\n")
    for m, c in zip(art.value.basis, art.value.coeffs):
        fh.write(" ".join(str(e) for e in m) + f" {float(c)!r}\n")
    for j, p in enumerate(art.controller.components):
        fh.write(f"control {j} {len(p.terms)}\n")
        _write_poly(fh, p)
    fh.write("end\n")


def read_artifact(fh: TextIO) -> Artifact:
    lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    it = iter(lines)

    def terms(count: int, nv: int):
        out = []
        for _ in range(count):
            tok = next(it).split()
            if len(tok) != nv + 1:
                raise ValueError("malformed term line in artifact")
            out.append((tuple(int(t) for t in tok[:nv]), float(tok[nv])))
        return out

    head = next(it).split()
    if head[0] != ARTIFACT_FORMAT:
        raise ValueError("not a controller artifact")
    if int(head[1]) != ARTIFACT_VERSION:
        raise ValueError(f"unsupported artifact version {head[1]}")
    meta: dict[str, str] = {}
    V = None
    comps: list[Polynomial] = []
    for line in it:
        key, *rest = line.split()
        if key == "value":
            tv = terms(int(rest[0]), int(meta["nvars"]))
            V = ValueFunction([m for m, _ in tv], [c for _, c in tv])
        elif key == "control":
            nv = int(meta["nvars"])
            comps.append(Polynomial(nv, dict(terms(int(rest[1]), nv))))
        elif key == "end":
            break
        else:
            meta[key] = rest[0] if rest else ""
    if V is None or len(comps) != int(meta.get("inputs", -1)):
        raise ValueError("artifact is incomplete")
    return Artifact(V, Controller(comps), AttenuationLevel(float(meta["gamma_sq"])),
                    int(meta["outer"]), int(meta["inner"]), meta.get("fingerprint", ""))


def artifact_to_string(art: Artifact) -> str:
    buf = io.StringIO()
    write_artifact(art, buf)
    return buf.getvalue()
