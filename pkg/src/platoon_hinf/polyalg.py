"""Sparse multivariate polynomials over a fixed number of indeterminates.

Monomials are exponent tuples; a polynomial is a canonical map from monomial
to float coefficient with exact zeros removed.  Everything else in the
package (dynamics, value functions, SOS constraints) is built from these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg

Monomial = tuple[int, ...]

#: absolute tolerance on coefficient differences used by :meth:`Polynomial.isclose`
COEFF_ATOL = 1e-9


def _check_monomial(m: Monomial, nvars: int) -> Monomial:
    m = tuple(int(e) for e in m)
    if len(m) != nvars:
        raise ValueError(f"monomial {m} has {len(m)} exponents, expected {nvars}")
    if any(e < 0 for e in m):
        raise ValueError(f"negative exponent in monomial {m}")
    return m


def monomial_degree(m: Monomial) -> int:
    return sum(m)


def monomial_mul(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


class Polynomial:
    """Real polynomial in ``nvars`` indeterminates, stored sparsely.

    Arithmetic returns new objects; instances are treated as immutable.
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: Mapping[Monomial, float] | None = None):
        if nvars < 0:
            raise ValueError("nvars must be non-negative")
        self.nvars = int(nvars)
        clean: dict[Monomial, float] = {}
        if terms:
            for m, c in terms.items():
                m = _check_monomial(m, self.nvars)
                c = float(c)
                if c != 0.0:
                    clean[m] = clean.get(m, 0.0) + c
            clean = {m: c for m, c in clean.items() if c != 0.0}
        self.terms = clean

    @classmethod
    def _raw(cls, nvars: int, terms: dict[Monomial, float]) -> "Polynomial":
        # trusted constructor: terms already canonical
        p = object.__new__(cls)
        p.nvars = nvars
        p.terms = terms
        return p

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls._raw(nvars, {})

    @classmethod
    def constant(cls, nvars: int, c: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def variable(cls, nvars: int, i: int) -> "Polynomial":
        if not 0 <= i < nvars:
            raise IndexError(f"variable index {i} out of range for {nvars} variables")
        e = [0] * nvars
        e[i] = 1
        return cls._raw(nvars, {tuple(e): 1.0})

    @classmethod
    def from_monomial(cls, m: Monomial, coeff: float = 1.0) -> "Polynomial":
        return cls(len(m), {tuple(m): coeff})

    # -- basic queries ----------------------------------------------------
    def __len__(self) -> int:
        return len(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self.terms), default=-1)

    def coefficient(self, m: Monomial) -> float:
        return self.terms.get(tuple(m), 0.0)

    def constant_term(self) -> float:
        return self.terms.get((0,) * self.nvars, 0.0)

    def support(self) -> list[Monomial]:
        return sorted(self.terms, key=grlex_key)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # -- comparison -------------------------------------------------------
    def __eq__(self, other: object) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def isclose(self, other: "Polynomial", atol: float = COEFF_ATOL) -> bool:
        return (self - other).max_abs_coeff() <= atol

    # -- arithmetic -------------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError(
                    f"variable-count mismatch: {self.nvars} vs {other.nvars}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.nvars, float(other))
        return NotImplemented

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for m, c in other.terms.items():
            v = out.get(m, 0.0) + c
            if v == 0.0:
                out.pop(m, None)
            else:
                out[m] = v
        return Polynomial._raw(self.nvars, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial._raw(self.nvars, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def scale(self, a: float) -> "Polynomial":
        a = float(a)
        if a == 0.0:
            return Polynomial.zero(self.nvars)
        return Polynomial._raw(self.nvars, {m: a * c for m, c in self.terms.items()
                                            if a * c != 0.0})

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Monomial, float] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                m = tuple(x + y for x, y in zip(ma, mb))
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial._raw(self.nvars, {m: c for m, c in out.items() if c != 0.0})

    __rmul__ = __mul__

    def __truediv__(self, a: float) -> "Polynomial":
        return self.scale(1.0 / float(a))

    def __pow__(self, k: int) -> "Polynomial":
        if k < 0:
            raise ValueError("negative powers are not polynomials")
        result = Polynomial.constant(self.nvars, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    # -- calculus ---------------------------------------------------------
    def diff(self, i: int) -> "Polynomial":
        if not 0 <= i < self.nvars:
            raise IndexError(f"variable index {i} out of range")
        out: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            e = m[i]
            if e:
                d = m[:i] + (e - 1,) + m[i + 1:]
                out[d] = out.get(d, 0.0) + c * e
        return Polynomial._raw(self.nvars, {m: c for m, c in out.items() if c != 0.0})

    def gradient(self, wrt: Iterable[int] | None = None) -> list["Polynomial"]:
        idx = range(self.nvars) if wrt is None else wrt
        return [self.diff(i) for i in idx]

    # -- evaluation -------------------------------------------------------
    def evaluate(self, point: Sequence[float]) -> float:
        point = np.asarray(point, dtype=float)
        if point.shape != (self.nvars,):
            raise ValueError(f"point has shape {point.shape}, expected ({self.nvars},)")
        total = 0.0
        for m, c in self.terms.items():
            v = c
            for x, e in zip(point, m):
                if e:
                    v *= x ** e
            total += v
        return float(total)

    __call__ = evaluate

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Vectorised evaluation at the rows of ``points``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.nvars:
            raise ValueError("point dimension mismatch")
        if not self.terms:
            return np.zeros(points.shape[0])
        exps = np.array(list(self.terms.keys()), dtype=int)
        coeffs = np.array(list(self.terms.values()))
        vals = np.ones((points.shape[0], len(coeffs)))
        for j in range(self.nvars):
            col = exps[:, j]
            if col.any():
                vals *= points[:, [j]] ** col[None, :]
        return vals @ coeffs

    # -- variable manipulation --------------------------------------------
    def extend(self, nvars: int) -> "Polynomial":
        """Same polynomial viewed in ``nvars`` >= current indeterminates (appended)."""
        if nvars < self.nvars:
            raise ValueError("cannot drop variables with extend()")
        pad = (0,) * (nvars - self.nvars)
        return Polynomial._raw(nvars, {m + pad: c for m, c in self.terms.items()})

    def embed(self, nvars: int, index_map: Sequence[int]) -> "Polynomial":
        """Rename variable ``k`` to ``index_map[k]`` inside an ``nvars`` space."""
        if len(index_map) != self.nvars:
            raise ValueError("index_map length must equal nvars of the polynomial")
        out: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            e = [0] * nvars
            for k, ek in enumerate(m):
                e[index_map[k]] += ek
            t = tuple(e)
            out[t] = out.get(t, 0.0) + c
        return Polynomial(nvars, out)

    def substitute(self, i: int, q: "Polynomial") -> "Polynomial":
        """Replace variable ``i`` by polynomial ``q`` (same variable space)."""
        q = self._coerce(q)
        out = Polynomial.zero(self.nvars)
        powers = {0: Polynomial.constant(self.nvars, 1.0)}
        for m, c in self.terms.items():
            e = m[i]
            if e not in powers:
                powers[e] = q ** e
            rest = m[:i] + (0,) + m[i + 1:]
            out = out + Polynomial._raw(self.nvars, {rest: c}) * powers[e]
        return out

    def prune(self, tol: float) -> "Polynomial":
        return Polynomial._raw(self.nvars, {m: c for m, c in self.terms.items()
                                            if abs(c) > tol})

    # -- display ----------------------------------------------------------
    def to_string(self, names: Sequence[str] | None = None, fmt: str = ".6g") -> str:
        if not self.terms:
            return "0"
        names = names or [f"x{i + 1}" for i in range(self.nvars)]
        parts = []
        for m in sorted(self.terms, key=grlex_key):
            c = self.terms[m]
            factors = [n if e == 1 else f"{n}^{e}" for n, e in zip(names, m) if e]
            body = "*".join(factors)
            if not body:
                parts.append(format(c, fmt))
            elif c == 1.0:
                parts.append(body)
            elif c == -1.0:
                parts.append("-" + body)
            else:
                parts.append(f"{format(c, fmt)}*{body}")
        return " + ".join(parts).replace("+ -", "- ")

    def __repr__(self) -> str:
        return f"Polynomial({self.to_string()})"


def grlex_key(m: Monomial):
    """Sort key for graded lexicographic order (x1 > x2 > ... within a degree)."""
    return (sum(m), tuple(-e for e in m))


def gradient(p: Polynomial, wrt: Iterable[int] | None = None) -> list[Polynomial]:
    return p.gradient(wrt)


def evaluate(p: Polynomial, point: Sequence[float]) -> float:
    return p.evaluate(point)


def monomial_basis(nvars: int, deg_min: int, deg_max: int,
                   variables: Sequence[int] | None = None) -> list[Monomial]:
    """All monomials with ``deg_min <= degree <= deg_max`` in graded lex order.

    ``variables`` restricts the monomials to a subset of the indeterminates
    (the others get exponent zero); by default all ``nvars`` are used.
    """
    if not 0 <= deg_min <= deg_max:
        raise ValueError("need 0 <= deg_min <= deg_max")
    active = list(range(nvars)) if variables is None else sorted(set(variables))
    out: list[Monomial] = []
    for d in range(deg_min, deg_max + 1):
        layer = []
        for combo in combinations_with_replacement(active, d):
            e = [0] * nvars
            for v in combo:
                e[v] += 1
            layer.append(tuple(e))
        layer.sort(key=grlex_key)
        out.extend(layer)
    return out


def basis_count(nvars: int, deg_min: int, deg_max: int) -> int:
    """Stars-and-bars count matching :func:`monomial_basis`."""
    return sum(math.comb(nvars + d - 1, d) for d in range(deg_min, deg_max + 1))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower_i, upper_i]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValueError("lower and upper bounds differ in length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("box requires lower[i] < upper[i] for every i")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, half_widths: Sequence[float]) -> "Box":
        return cls(tuple(-h for h in half_widths), tuple(half_widths))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def volume(self) -> float:
        return float(np.prod([b - a for a, b in zip(self.lower, self.upper)]))

    def contains(self, x: Sequence[float], tol: float = 0.0) -> bool:
        return all(a - tol <= v <= b + tol for v, a, b in zip(x, self.lower, self.upper))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))


def box_moment(m: Monomial, box: Box) -> float:
    """Integral of the monomial over the box (closed form, per-axis product)."""
    if len(m) != box.dim:
        raise ValueError("monomial and box dimensions disagree")
    total = 1.0
    for e, a, b in zip(m, box.lower, box.upper):
        total *= (b ** (e + 1) - a ** (e + 1)) / (e + 1)
    return total


def integrate_box(p: Polynomial, box: Box) -> float:
    return sum(c * box_moment(m, box) for m, c in p.terms.items())


@dataclass(frozen=True)
class PolyFit:
    poly: Polynomial
    max_residual: float
    rms_residual: float


def fit_polynomial(samples: Sequence[tuple[float, float]], degree: int,
                   interpolate_at: Sequence[tuple[float, float]] = ()) -> PolyFit:
    """Least-squares univariate fit with exact interpolation constraints.

    Solved in a centred, scaled variable through the null space of the
    constraint rows, then expanded back to monomials of the original variable.
    """
    pts = np.asarray(samples, dtype=float).reshape(-1, 2)
    cons = np.asarray(interpolate_at, dtype=float).reshape(-1, 2)
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if len(pts) <= degree:
        raise ValueError("need more samples than the polynomial degree")
    if len(cons) >= degree + 1:
        raise ValueError("too many interpolation constraints for this degree")

    s, y = pts[:, 0], pts[:, 1]
    lo, hi = s.min(), s.max()
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) if hi > lo else 1.0

    def vander(t):
        return np.vander((t - centre) / half, degree + 1, increasing=True)

    V = vander(s)
    if len(cons):
        Cm, d = vander(cons[:, 0]), cons[:, 1]
        if np.linalg.matrix_rank(Cm) < len(cons):
            raise np.linalg.LinAlgError("interpolation constraints are rank deficient")
        a_p = np.linalg.lstsq(Cm, d, rcond=None)[0]
        N = scipy.linalg.null_space(Cm)
        VN = V @ N
        if np.linalg.matrix_rank(VN) < N.shape[1]:
            raise np.linalg.LinAlgError("constrained least-squares system is rank deficient")
        z = np.linalg.lstsq(VN, y - V @ a_p, rcond=None)[0]
        a = a_p + N @ z
    else:
        if np.linalg.matrix_rank(V) < degree + 1:
            raise np.linalg.LinAlgError("least-squares system is rank deficient")
        a = np.linalg.lstsq(V, y, rcond=None)[0]

    t = (Polynomial.variable(1, 0) - centre) / half
    poly = Polynomial.zero(1)
    tk = Polynomial.constant(1, 1.0)
    for ak in a:
        poly = poly + tk * ak
        tk = tk * t
    resid = V @ a - y
    return PolyFit(poly, float(np.max(np.abs(resid))), float(np.sqrt(np.mean(resid ** 2))))
