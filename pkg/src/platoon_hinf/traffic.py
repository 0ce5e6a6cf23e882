"""Optimal-velocity car-following model and the lumped mixed-traffic platoon model.

Vehicles are numbered 1..n behind a head vehicle 0.  The lumped deviation
state is interleaved, ``x = [s~_1, v~_1, s~_2, v~_2, ..., s~_n, v~_n]``, so
vehicle ``i`` owns indices ``2(i-1)`` (spacing) and ``2(i-1)+1`` (velocity).
The head-vehicle velocity deviation ``w = v~_0`` is the disturbance.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .polyalg import Polynomial, fit_polynomial

DEFAULT_FIT_DEGREE = 5
DEFAULT_FIT_BOUND = 0.5      # m/s, max |v_d - fit| over the fit range
FIT_SAMPLES = 201
FIT_COEFF_RTOL = 1e-12


@dataclass(frozen=True)
class OvmParams:
    alpha: float = 0.6
    beta: float = 0.9
    s_st: float = 5.0
    s_go: float = 35.0
    v_max: float = 30.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.s_st < self.s_go:
            raise ValueError("need 0 < s_st < s_go")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")


def spacing_index(i: int) -> int:
    """State index of the spacing deviation of vehicle ``i`` (1-based)."""
    return 2 * (i - 1)


def velocity_index(i: int) -> int:
    return 2 * (i - 1) + 1


@dataclass(frozen=True)
class FleetConfig:
    """``n`` following vehicles, CAVs at ``cav_indices`` (1-based), OVM params per HDV.

    ``baseline_params`` drive CAV slots when a simulation replaces every
    CAV by a human driver.
    """

    n: int
    cav_indices: tuple[int, ...]
    hdv_params: Mapping[int, OvmParams]
    baseline_params: OvmParams = field(default_factory=OvmParams)

    def __post_init__(self):
        object.__setattr__(self, "cav_indices", tuple(int(i) for i in self.cav_indices))
        object.__setattr__(self, "hdv_params", dict(self.hdv_params))
        S = self.cav_indices
        if self.n < 1:
            raise ValueError("need at least one following vehicle")
        if not S or S[0] != 1:
            raise ValueError("vehicle 1 (directly behind the head) must be a CAV")
        if any(b <= a for a, b in zip(S, S[1:])):
            raise ValueError("cav_indices must be strictly increasing")
        if S[-1] > self.n:
            raise ValueError("cav index exceeds n")
        hdv = set(range(1, self.n + 1)) - set(S)
        if set(self.hdv_params) != hdv:
            raise ValueError(f"hdv_params must be given exactly for vehicles {sorted(hdv)}")

    @classmethod
    def uniform(cls, n: int, cav_indices: Sequence[int],
                params: OvmParams | None = None) -> "FleetConfig":
        params = params or OvmParams()
        hdv = [i for i in range(1, n + 1) if i not in set(cav_indices)]
        return cls(n, tuple(cav_indices), {i: params for i in hdv}, params)

    @property
    def m(self) -> int:
        return len(self.cav_indices)

    @property
    def hdv_indices(self) -> list[int]:
        return sorted(self.hdv_params)

    @property
    def state_dim(self) -> int:
        return 2 * self.n

    def is_cav(self, i: int) -> bool:
        return i in self.cav_indices

    def params_for(self, i: int) -> OvmParams:
        """OVM parameters for vehicle ``i`` (baseline parameters for CAV slots)."""
        return self.hdv_params.get(i, self.baseline_params)


def desired_velocity(s, p: OvmParams):
    """Raised-cosine spacing policy; accepts scalars or arrays."""
    s = np.asarray(s, dtype=float)
    mid = 0.5 * p.v_max * (1.0 - np.cos(np.pi * (s - p.s_st) / (p.s_go - p.s_st)))
    out = np.where(s <= p.s_st, 0.0, np.where(s >= p.s_go, p.v_max, mid))
    return float(out) if out.ndim == 0 else out


def equilibrium_spacing(v_star: float, p: OvmParams) -> float:
    if not 0 < v_star < p.v_max:
        raise ValueError("equilibrium velocity must lie strictly between 0 and v_max")
    return p.s_st + (p.s_go - p.s_st) / math.pi * math.acos(1.0 - 2.0 * v_star / p.v_max)


@dataclass(frozen=True)
class Equilibrium:
    v_star: float
    s_star: float

    @classmethod
    def from_velocity(cls, v_star: float, p: OvmParams) -> "Equilibrium":
        return cls(float(v_star), equilibrium_spacing(v_star, p))

    def check(self, p: OvmParams, tol: float = 1e-9) -> None:
        if not (0 < self.v_star < p.v_max and p.s_st < self.s_star < p.s_go):
            raise ValueError("equilibrium outside the OVM's admissible range")
        if abs(desired_velocity(self.s_star, p) - self.v_star) > tol:
            raise ValueError("equilibrium spacing does not match the desired velocity")


@dataclass(frozen=True)
class PerformanceWeights:
    theta_s: float = 0.03
    theta_v: float = 0.15
    theta_u: float = 1.0

    def __post_init__(self):
        if min(self.theta_s, self.theta_v, self.theta_u) <= 0:
            raise ValueError("performance weights must be positive")

    def Q(self, n: int) -> np.ndarray:
        return np.diag(np.tile([self.theta_s ** 2, self.theta_v ** 2], n))

    def R(self, m: int) -> np.ndarray:
        return np.eye(m) * self.theta_u ** 2


def performance_output(x, u, w: PerformanceWeights) -> tuple[np.ndarray, float]:
    """``z = [sqrt(Q) x; sqrt(R) u]`` and its squared norm."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    if x.size % 2:
        raise ValueError("state dimension must be even")
    sq = np.tile([w.theta_s, w.theta_v], x.size // 2)
    z = np.concatenate([sq * x, w.theta_u * u])
    return z, float(z @ z)


def hdv_acceleration(s_dev, v_dev, v_pred_dev, p: OvmParams, eq: Equilibrium,
                     approx: bool = False, fit: Polynomial | None = None):
    """OVM acceleration in deviation coordinates.

    With ``approx`` the desired-velocity deviation comes from ``fit`` (a
    univariate polynomial in the spacing deviation) instead of the exact law.
    """
    if approx:
        if fit is None:
            raise ValueError("approximate mode needs the fitted polynomial")
        vd_dev = univariate_eval(fit, s_dev)
    else:
        vd_dev = desired_velocity(np.asarray(s_dev, dtype=float) + eq.s_star, p) - eq.v_star
    return p.alpha * (vd_dev - v_dev) + p.beta * (v_pred_dev - v_dev)


def univariate_eval(p: Polynomial, t):
    coeffs = np.zeros(max(p.degree(), 0) + 1)
    for (k,), c in p.terms.items():
        coeffs[k] = c
    return np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), coeffs)


@dataclass(frozen=True)
class VelocityFit:
    """Fit of ``v_d(s* + s~) - v*`` over ``s~`` in ``[lo, hi]``; zero constant term."""

    poly: Polynomial
    lo: float
    hi: float
    max_error: float


def fit_desired_velocity(p: OvmParams, eq: Equilibrium, degree: int,
                         half_width: float) -> VelocityFit:
    lo = max(-half_width, p.s_st - eq.s_star)
    hi = min(half_width, p.s_go - eq.s_star)
    t = np.linspace(lo, hi, FIT_SAMPLES)
    y = desired_velocity(t + eq.s_star, p) - eq.v_star
    res = fit_polynomial(list(zip(t, y)), degree, interpolate_at=[(0.0, 0.0)])
    # the interpolation constraint holds to rounding; make f(0) = 0 exact and
    # drop round-off coefficients (even powers vanish for a symmetric range)
    cmax = res.poly.max_abs_coeff()
    poly = Polynomial(1, {m: c for m, c in res.poly.terms.items()
                          if m != (0,) and abs(c) > FIT_COEFF_RTOL * cmax})
    err = float(np.max(np.abs(univariate_eval(poly, t) - y)))
    return VelocityFit(poly, float(lo), float(hi), err)


class FitRejected(ValueError):
    pass


class MixedTrafficModel:
    """Lumped model ``x' = f(x) + g u + k w`` with polynomial drift ``f``.

    Treat instances as immutable once built by :func:`assemble_model`.
    """

    def __init__(self, fleet: FleetConfig, equilibrium: Equilibrium, fits: dict[int, VelocityFit],
                 f: list[Polynomial], g: np.ndarray, k: np.ndarray, fit_degree: int,
                 spacing_bound: float):
        self.fleet = fleet
        self.equilibrium = equilibrium
        self.fits = fits
        self.f = f
        self.g = g
        self.k = k
        self.fit_degree = fit_degree
        self.spacing_bound = spacing_bound
        self._fit_coeffs = {i: _coeff_array(v.poly) for i, v in fits.items()}

    @property
    def n(self) -> int:
        return self.fleet.n

    @property
    def m(self) -> int:
        return self.fleet.m

    @property
    def nx(self) -> int:
        return 2 * self.fleet.n

    @property
    def fit_residual(self) -> float:
        return max((v.max_error for v in self.fits.values()), default=0.0)

    def drift(self, x) -> np.ndarray:
        """Evaluate the polynomial ``f`` directly (slow path, for checks)."""
        return np.array([p.evaluate(x) for p in self.f])

    def rhs(self, x, u, w: float, exact: bool = True, all_hdv: bool = False) -> np.ndarray:
        """State derivative.  ``exact`` selects the piecewise law over the fit;
        ``all_hdv`` drives every CAV slot by the OVM law and ignores ``u``."""
        x = np.asarray(x, dtype=float)
        fl, eq = self.fleet, self.equilibrium
        v = x[1::2]
        s = x[0::2]
        v_pred = np.concatenate([[w], v[:-1]])
        dx = np.empty_like(x)
        dx[0::2] = v_pred - v
        u = np.atleast_1d(np.asarray(u, dtype=float)) if not all_hdv else None
        ci = 0
        for i in range(1, fl.n + 1):
            j = i - 1
            if fl.is_cav(i) and not all_hdv:
                dx[2 * j + 1] = u[ci]
                ci += 1
                continue
            p = fl.params_for(i)
            if exact:
                vd = desired_velocity(s[j] + eq.s_star, p) - eq.v_star
            else:
                vd = np.polynomial.polynomial.polyval(s[j], self._baseline_fit(i))
            dx[2 * j + 1] = p.alpha * (vd - v[j]) + p.beta * (v_pred[j] - v[j])
        return dx

    def _baseline_fit(self, i: int) -> np.ndarray:
        if i not in self._fit_coeffs:
            p = self.fleet.params_for(i)
            fit = fit_desired_velocity(p, self.equilibrium, self.fit_degree, self.spacing_bound)
            self._fit_coeffs[i] = _coeff_array(fit.poly)
        return self._fit_coeffs[i]

    def exact_rhs(self, x, u, w: float) -> np.ndarray:
        return self.rhs(x, u, w, exact=True)

    def approx_rhs(self, x, u, w: float) -> np.ndarray:
        return self.rhs(x, u, w, exact=False)

    def fingerprint(self) -> str:
        """Hash of everything that defines the model the learner sees."""
        h = hashlib.sha256()
        fl, eq = self.fleet, self.equilibrium
        h.update(f"n={fl.n};S={fl.cav_indices};deg={self.fit_degree};b={self.spacing_bound!r};".encode())
        h.update(f"v*={eq.v_star!r};s*={eq.s_star!r};".encode())
        for i in fl.hdv_indices:
            h.update(f"{i}:{fl.hdv_params[i]!r};".encode())
        for p in self.f:
            for m in sorted(p.terms):
                h.update(f"{m}:{p.terms[m]!r},".encode())
            h.update(b"|")
        return h.hexdigest()[:16]


def _coeff_array(p: Polynomial) -> np.ndarray:
    out = np.zeros(max(p.degree(), 0) + 1)
    for (k,), c in p.terms.items():
        out[k] = c
    return out


def assemble_model(fleet: FleetConfig, eq: Equilibrium, fit_degree: int = DEFAULT_FIT_DEGREE,
                   spacing_bound: float = 4.0, fit_bound: float = DEFAULT_FIT_BOUND
                   ) -> MixedTrafficModel:
    """Build ``(f, g, k)``; HDV desired velocities are fitted over ``|s~| <= spacing_bound``."""
    if fit_degree < 1:
        raise ValueError("fit_degree must be at least 1")
    nx = 2 * fleet.n
    fits: dict[int, VelocityFit] = {}
    for i in fleet.hdv_indices:
        p = fleet.hdv_params[i]
        eq.check(p, tol=1e-6)
        fit = fit_desired_velocity(p, eq, fit_degree, spacing_bound)
        if fit.max_error >= fit_bound:
            raise FitRejected(f"vehicle {i}: fit error {fit.max_error:.3g} m/s exceeds {fit_bound}")
        fits[i] = fit

    X = [Polynomial.variable(nx, j) for j in range(nx)]
    zero = Polynomial.zero(nx)
    f: list[Polynomial] = [zero] * nx
    g = np.zeros((nx, fleet.m))
    k = np.zeros(nx)
    k[spacing_index(1)] = 1.0
    for i in range(1, fleet.n + 1):
        si, vi = spacing_index(i), velocity_index(i)
        f[si] = -X[vi] if i == 1 else X[velocity_index(i - 1)] - X[vi]
        if fleet.is_cav(i):
            g[vi, fleet.cav_indices.index(i)] = 1.0
            continue
        p = fleet.hdv_params[i]
        vd = fits[i].poly.embed(nx, [si])
        f[vi] = (vd - X[vi]).scale(p.alpha) + (X[velocity_index(i - 1)] - X[vi]).scale(p.beta)
    return MixedTrafficModel(fleet, eq, fits, f, g, k, fit_degree, spacing_bound)
