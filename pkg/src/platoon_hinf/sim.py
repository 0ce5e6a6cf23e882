"""Closed-loop simulation of the platoon and empirical L2-gain estimation.

States are deviations from the equilibrium (see :mod:`traffic`).  The head
vehicle's velocity deviation is the disturbance ``w(t)``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .traffic import MixedTrafficModel, PerformanceWeights

EXACT = "exact"
APPROXIMATED = "approximated"

PAPER_AMPLITUDE = 5.0                  # m/s
PAPER_RATE = 20.0 / math.pi            # rad/s, taken verbatim
TAIL_FRACTION = 0.1
TAIL_SHARE_WARN = 0.01


class SimulationBlowUp(RuntimeError):
    """State norm left the admissible bound; ``trace`` holds the rows so far."""

    def __init__(self, msg: str, trace: "SimulationTrace"):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class DisturbanceSignal:
    """Head-vehicle velocity deviation ``w(t)`` in m/s.

    kinds: ``sinusoid`` (amplitude * sin(rate * t)), ``constant`` (amplitude),
    ``braking-pulse`` (-amplitude on [start, start + duration)), and
    ``custom-samples`` (linear interpolation of ``samples``, zero outside).
    """

    kind: str = "sinusoid"
    amplitude: float = PAPER_AMPLITUDE
    rate: float = PAPER_RATE
    start: float = 0.0
    duration: float = 0.0
    samples: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("sinusoid", "constant", "braking-pulse", "custom-samples"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if not math.isfinite(self.amplitude) or not math.isfinite(self.rate):
            raise ValueError("disturbance parameters must be finite")
        if self.kind == "braking-pulse" and (self.duration <= 0 or self.start < 0):
            raise ValueError("braking pulse needs start >= 0 and duration > 0")
        if self.kind == "custom-samples":
            ts = [t for t, _ in self.samples]
            if len(ts) < 2 or any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValueError("custom samples need >= 2 points with increasing times")
            if not all(math.isfinite(v) for _, v in self.samples):
                raise ValueError("custom samples must be finite")

    @classmethod
    def sinusoid(cls, amplitude: float = PAPER_AMPLITUDE, rate: float = PAPER_RATE):
        return cls("sinusoid", amplitude=amplitude, rate=rate)

    @classmethod
    def constant(cls, value: float):
        return cls("constant", amplitude=value)

    @classmethod
    def braking_pulse(cls, delta: float, start: float, duration: float):
        return cls("braking-pulse", amplitude=delta, start=start, duration=duration)

    @classmethod
    def custom(cls, times, values):
        return cls("custom-samples", samples=tuple((float(t), float(v)) for t, v in zip(times, values)))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "sinusoid":
            out = self.amplitude * np.sin(self.rate * t)
        elif self.kind == "constant":
            out = np.full_like(t, self.amplitude)
        elif self.kind == "braking-pulse":
            on = (t >= self.start) & (t < self.start + self.duration)
            out = np.where(on, -self.amplitude, 0.0)
        else:
            ts, ws = np.array(self.samples).T
            out = np.interp(t, ts, ws, left=0.0, right=0.0)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SimulationConfig:
    dt: float = 0.01
    horizon: float = 30.0
    x0: tuple[float, ...] | None = None
    blowup: float = 1e3          # abort when ||x|| exceeds this

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= self.dt:
            raise ValueError("horizon must be at least one step")
        if not self.blowup > 0:
            raise ValueError("blow-up bound must be positive")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def initial_state(self, nx: int) -> np.ndarray:
        if self.x0 is None:
            return np.zeros(nx)
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (nx,):
            raise ValueError(f"initial state has length {x0.size}, model needs {nx}")
        return x0


@dataclass
class SimulationTrace:
    t: np.ndarray
    x: np.ndarray            # steps+1 x 2n
    u: np.ndarray            # steps+1 x m
    w: np.ndarray
    z_sq: np.ndarray
    v_head: np.ndarray       # v* + w
    dynamics: str = EXACT
    all_hdv: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[1] // 2

    def velocity(self, i: int) -> np.ndarray:
        """Velocity deviation of vehicle ``i`` (1-based); 0 is the head."""
        return self.w if i == 0 else self.x[:, 2 * (i - 1) + 1]

    def spacing(self, i: int) -> np.ndarray:
        return self.x[:, 2 * (i - 1)]

    def columns(self) -> list[str]:
        cols = ["t"]
        for i in range(1, self.n + 1):
            cols += [f"s{i}", f"v{i}"]
        cols += [f"u{j + 1}" for j in range(self.u.shape[1])]
        return cols + ["w", "z_sq"]

    def to_csv(self, fh: TextIO) -> None:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(self.columns())
        data = np.column_stack([self.t, self.x, self.u, self.w, self.z_sq])
        for row in data:
            wr.writerow([f"{v:.12g}" for v in row])


@dataclass(frozen=True)
class GainEstimate:
    numerator: float      # integral of ||z||^2
    denominator: float    # integral of w^2
    gamma: float


def _z_sq(x: np.ndarray, u: np.ndarray, weights: PerformanceWeights) -> np.ndarray:
    n = x.shape[1] // 2
    q = np.tile([weights.theta_s ** 2, weights.theta_v ** 2], n)
    return (x * x) @ q + weights.theta_u ** 2 * np.sum(u * u, axis=1)


def simulate(model: MixedTrafficModel, controller: Callable | None, w: DisturbanceSignal,
             cfg: SimulationConfig | None = None, dynamics: str = EXACT,
             all_hdv: bool = False, weights: PerformanceWeights | None = None) -> SimulationTrace:
    """Fixed-step RK4 integration of ``x' = rhs(x, u(x), w(t))``.

    With ``all_hdv`` (or ``controller=None``) every CAV slot follows the OVM
    law and the recorded input is zero.
    """
    cfg = cfg or SimulationConfig()
    weights = weights or PerformanceWeights()
    if dynamics not in (EXACT, APPROXIMATED):
        raise ValueError(f"dynamics must be {EXACT!r} or {APPROXIMATED!r}")
    all_hdv = all_hdv or controller is None
    exact = dynamics == EXACT
    nx, m = model.nx, model.m
    if controller is not None and not all_hdv:
        probe = np.atleast_1d(controller(np.zeros(nx)))
        if probe.shape != (m,):
            raise ValueError(f"controller returns {probe.size} inputs, model has {m} CAVs")

    def policy(x):
        return np.zeros(m) if all_hdv else np.atleast_1d(controller(x))

    def f(t, x):
        return model.rhs(x, policy(x), w(t), exact=exact, all_hdv=all_hdv)

    N, h = cfg.steps, cfg.dt
    t = np.arange(N + 1) * h
    X = np.zeros((N + 1, nx))
    U = np.zeros((N + 1, m))
    X[0] = cfg.initial_state(nx)
    U[0] = policy(X[0])
    last = N
    for k in range(N):
        tk, xk = t[k], X[k]
        k1 = f(tk, xk)
        k2 = f(tk + 0.5 * h, xk + 0.5 * h * k1)
        k3 = f(tk + 0.5 * h, xk + 0.5 * h * k2)
        k4 = f(tk + h, xk + h * k3)
        X[k + 1] = xk + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        nrm = np.linalg.norm(X[k + 1])
        if not np.isfinite(nrm) or nrm > cfg.blowup:
            last = k + 1
            break
        U[k + 1] = policy(X[k + 1])
    W = np.asarray(w(t), dtype=float) * np.ones_like(t)
    trace = SimulationTrace(t=t[:last + 1], x=X[:last + 1], u=U[:last + 1], w=W[:last + 1],
                            z_sq=_z_sq(X[:last + 1], U[:last + 1], weights),
                            v_head=model.equilibrium.v_star + W[:last + 1],
                            dynamics=dynamics, all_hdv=all_hdv)
    if last < N:
        raise SimulationBlowUp(f"state norm exceeded {cfg.blowup:g} at t = {t[last]:.3f} s", trace)
    return trace


def empirical_gain(trace: SimulationTrace, weights: PerformanceWeights | None = None) -> GainEstimate:
    """Finite-horizon ``sqrt(int ||z||^2 dt / int w^2 dt)`` by the trapezoidal rule.

    ``weights`` recomputes ``||z||^2`` from the stored states and inputs.
    """
    z_sq = trace.z_sq if weights is None else _z_sq(trace.x, trace.u, weights)
    w_sq = trace.w ** 2
    den = float(trapezoid(w_sq, trace.t))
    if not den > 0:
        raise ValueError("trace carries no disturbance energy")
    num = float(trapezoid(z_sq, trace.t))
    if np.any(trace.x[0] != 0):
        warnings.warn("initial state is nonzero; the L2-gain definition assumes x(0) = 0",
                      RuntimeWarning, stacklevel=2)
    k0 = int(math.floor((1.0 - TAIL_FRACTION) * (trace.t.size - 1)))
    for name, series, total in (("||z||^2", z_sq, num), ("w^2", w_sq, den)):
        tail = float(trapezoid(series[k0:], trace.t[k0:]))
        if total > 0 and tail / total >= TAIL_SHARE_WARN:
            warnings.warn(f"trailing {TAIL_FRACTION:.0%} of the horizon holds {tail / total:.1%} "
                          f"of the {name} integral; the finite-horizon gain may be biased",
                          RuntimeWarning, stacklevel=2)
    return GainEstimate(numerator=num, denominator=den, gamma=math.sqrt(num / den))


@dataclass
class HeadTrack:
    t: np.ndarray
    velocity: np.ndarray
    position: np.ndarray


def head_vehicle_track(w: DisturbanceSignal, v_star: float, cfg: SimulationConfig | None = None) -> HeadTrack:
    """Absolute head-vehicle velocity ``v* + w(t)`` and position from 0."""
    cfg = cfg or SimulationConfig()
    t = np.arange(cfg.steps + 1) * cfg.dt
    v = v_star + np.asarray(w(t), dtype=float) * np.ones_like(t)
    return HeadTrack(t=t, velocity=v, position=cumulative_trapezoid(v, t, initial=0.0))


def peak_deviation(trace: SimulationTrace, vehicle: int, t_from: float | None = None) -> float:
    """Peak ``|v~_i|`` after ``t_from`` (default: second half of the horizon)."""
    t_from = trace.t[-1] / 2 if t_from is None else t_from
    sel = trace.t >= t_from
    return float(np.max(np.abs(trace.velocity(vehicle)[sel])))
