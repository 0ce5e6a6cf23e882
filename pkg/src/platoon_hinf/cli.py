"""Command-line entry point: ``platoon-hinf {learn,simulate,evaluate,report,stability}``.

Every command reads one YAML config (see ``configs/paper_small.yaml`` in the
repository), writes a resolved echo of it to the output directory, and exits
with 0 on success, 2 on config or input errors, 3 on solver failure and 4 on
simulation blow-up.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import yaml

from .learner import (Artifact, LearnerError, LearnerSetup, Schedule, default_box,
                      initial_controller, read_artifact, run, write_artifact)
from .polyalg import Box, monomial_basis
from .sim import (APPROXIMATED, EXACT, DisturbanceSignal, SimulationBlowUp, SimulationConfig,
                  empirical_gain, peak_deviation, simulate)
from .traffic import (Equilibrium, FitRejected, FleetConfig, MixedTrafficModel, OvmParams,
                      PerformanceWeights, assemble_model)

log = logging.getLogger("platoon_hinf")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BLOWUP = 0, 2, 3, 4

DEFAULTS: dict[str, Any] = {
    "fleet": {
        "n": 3,
        "cav_indices": [1],
        "v_star": 15.0,
        "ovm": {"alpha": 0.6, "beta": 0.9, "s_st": 5.0, "s_go": 35.0, "v_max": 30.0},
        "hdv_overrides": {},
        "fit_degree": 5,
        "fit_bound": 0.5,
    },
    "weights": {"theta_s": 0.03, "theta_v": 0.15, "theta_u": 1.0},
    "learner": {
        "value_degree": [2, 4],
        "box": {"spacing": 4.0, "velocity": 5.0},
        "localize": None,
        "schedule": {"i_max": 20, "k_max": 15, "tol_inner": 1e-4, "tol_outer": 1e-3,
                     "gamma_backoff": 1e-3, "fixed_gamma": None},
        "solver": {"tol_gap": 1e-7, "tol_feas": 1e-8, "max_iter": 200},
        "initial_gains": {"k_s": 0.5, "k_v": -1.0},
    },
    "sim": {
        "disturbance": {"kind": "sinusoid", "amplitude": 5.0, "rate": 20.0 / math.pi,
                        "start": 0.0, "duration": 0.0, "samples": []},
        "dt": 0.01,
        "horizon": 30.0,
        "dynamics": EXACT,
        "blowup": 1000.0,
        "x0": None,
    },
    "output": {"dir": "out", "formats": ["csv", "svg"]},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict) and key != "hdv_overrides":
            if not isinstance(val, dict):
                raise ConfigError(f"config key '{where}' must be a mapping")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _num(d: dict, key: str, path: str, kind=float, allow_none: bool = False,
         lo: float | None = None):
    val = d[key]
    if val is None and allow_none:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"config key '{path}.{key}' must be a number, got {val!r}")
    if kind is int and float(val) != int(val):
        raise ConfigError(f"config key '{path}.{key}' must be an integer, got {val!r}")
    if lo is not None and val < lo:
        raise ConfigError(f"config key '{path}.{key}' must be at least {lo:g}, got {val!r}")
    return int(val) if kind is int else float(val)


@dataclass
class RunConfig:
    """Resolved configuration; ``data`` is the merged nested dictionary."""

    data: dict

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data

    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping at the top level")
        cfg = cls(_merge(DEFAULTS, raw, ""))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config is not valid YAML: {e}") from e
        return cls.from_dict(raw)

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)

    # -- typed views, each raising ConfigError naming the offending key ----------

    def validate(self) -> None:
        self.fleet()
        self.weights()
        self.schedule()
        self.solver()
        self.value_degree()
        self.box()
        self.sim_config()
        self.disturbance()
        self.dynamics()
        g = self.data["learner"]["initial_gains"]
        for k in ("k_s", "k_v"):
            _num(g, k, "learner.initial_gains")
        loc = self.data["learner"]["localize"]
        if loc is not None and not isinstance(loc, bool):
            raise ConfigError("config key 'learner.localize' must be true, false or null")
        out = self.data["output"]
        if not isinstance(out["dir"], str) or not out["dir"]:
            raise ConfigError("config key 'output.dir' must be a non-empty string")
        if not isinstance(out["formats"], list) or not set(out["formats"]) <= {"csv", "svg"}:
            raise ConfigError("config key 'output.formats' must be a list drawn from [csv, svg]")

    def ovm(self, over: dict | None = None) -> OvmParams:
        base = dict(self.data["fleet"]["ovm"])
        path = "fleet.ovm"
        if over:
            unknown = set(over) - set(base)
            if unknown:
                raise ConfigError(f"unknown config key 'fleet.hdv_overrides.{sorted(unknown)[0]}'")
            base.update(over)
            path = "fleet.hdv_overrides"
        vals = {k: _num(base, k, path) for k in ("alpha", "beta", "s_st", "s_go", "v_max")}
        if set(base) != set(vals):
            raise ConfigError(f"unknown config key '{path}.{sorted(set(base) - set(vals))[0]}'")
        try:
            return OvmParams(**vals)
        except ValueError as e:
            raise ConfigError(f"config key '{path}': {e}") from e

    def fleet(self) -> FleetConfig:
        f = self.data["fleet"]
        n = _num(f, "n", "fleet", int)
        cavs = f["cav_indices"]
        if not isinstance(cavs, list) or not all(isinstance(c, int) and not isinstance(c, bool) for c in cavs):
            raise ConfigError("config key 'fleet.cav_indices' must be a list of integers")
        over = f["hdv_overrides"] or {}
        if not isinstance(over, dict):
            raise ConfigError("config key 'fleet.hdv_overrides' must be a mapping")
        base = self.ovm()
        params = {}
        for i in range(1, n + 1):
            if i in cavs:
                continue
            o = over.get(i, over.get(str(i)))
            params[i] = self.ovm(o) if o else base
        for key in over:
            if int(key) in cavs or not 1 <= int(key) <= n:
                raise ConfigError(f"config key 'fleet.hdv_overrides.{key}' does not name an HDV")
        try:
            fleet = FleetConfig(n, list(cavs), params, baseline_params=base)
        except ValueError as e:
            raise ConfigError(f"config key 'fleet.cav_indices': {e}") from e
        v_star = _num(f, "v_star", "fleet")
        if not 0 < v_star < base.v_max:
            raise ConfigError("config key 'fleet.v_star' must lie in (0, v_max)")
        if _num(f, "fit_degree", "fleet", int) < 1:
            raise ConfigError("config key 'fleet.fit_degree' must be at least 1")
        if not _num(f, "fit_bound", "fleet") > 0:
            raise ConfigError("config key 'fleet.fit_bound' must be positive")
        return fleet

    def weights(self) -> PerformanceWeights:
        w = self.data["weights"]
        vals = {k: _num(w, k, "weights") for k in ("theta_s", "theta_v", "theta_u")}
        try:
            return PerformanceWeights(**vals)
        except ValueError as e:
            raise ConfigError(f"config key 'weights': {e}") from e

    def schedule(self) -> Schedule:
        s = self.data["learner"]["schedule"]
        p = "learner.schedule"
        try:
            return Schedule(i_max=_num(s, "i_max", p, int, lo=1), k_max=_num(s, "k_max", p, int, lo=1),
                            tol_inner=_num(s, "tol_inner", p, lo=0), tol_outer=_num(s, "tol_outer", p, lo=0),
                            gamma_backoff=_num(s, "gamma_backoff", p, lo=0),
                            fixed_gamma=_num(s, "fixed_gamma", p, allow_none=True))
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"config key '{p}': {e}") from e

    def solver(self) -> dict:
        s = self.data["learner"]["solver"]
        p = "learner.solver"
        out = {"tol_gap": _num(s, "tol_gap", p), "tol_feas": _num(s, "tol_feas", p),
               "max_iter": _num(s, "max_iter", p, int)}
        if not (out["tol_gap"] > 0 and out["tol_feas"] > 0 and out["max_iter"] > 0):
            raise ConfigError(f"config key '{p}': tolerances and max_iter must be positive")
        return out

    def value_degree(self) -> tuple[int, int]:
        d = self.data["learner"]["value_degree"]
        if (not isinstance(d, list) or len(d) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in d)
                or not 1 <= d[0] <= d[1]):
            raise ConfigError("config key 'learner.value_degree' must be [min, max] with 1 <= min <= max")
        return d[0], d[1]

    def box(self) -> Box:
        b = self.data["learner"]["box"]
        sp_, vel = _num(b, "spacing", "learner.box"), _num(b, "velocity", "learner.box")
        if not (sp_ > 0 and vel > 0):
            raise ConfigError("config key 'learner.box' bounds must be positive")
        return default_box(_num(self.data["fleet"], "n", "fleet", int), sp_, vel)

    def sim_config(self) -> SimulationConfig:
        s = self.data["sim"]
        x0 = s["x0"]
        if x0 is not None:
            if not isinstance(x0, list) or len(x0) != 2 * self.data["fleet"]["n"]:
                raise ConfigError("config key 'sim.x0' must be null or a list of length 2n")
            x0 = tuple(float(v) for v in x0)
        try:
            return SimulationConfig(dt=_num(s, "dt", "sim"), horizon=_num(s, "horizon", "sim"),
                                    x0=x0, blowup=_num(s, "blowup", "sim"))
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"config key 'sim': {e}") from e

    def disturbance(self) -> DisturbanceSignal:
        d = self.data["sim"]["disturbance"]
        p = "sim.disturbance"
        samples = d["samples"] or []
        try:
            return DisturbanceSignal(kind=d["kind"], amplitude=_num(d, "amplitude", p),
                                     rate=_num(d, "rate", p), start=_num(d, "start", p),
                                     duration=_num(d, "duration", p),
                                     samples=tuple((float(t), float(v)) for t, v in samples))
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"config key '{p}': {e}") from e

    def dynamics(self) -> str:
        dyn = self.data["sim"]["dynamics"]
        if dyn not in (EXACT, APPROXIMATED):
            raise ConfigError(f"config key 'sim.dynamics' must be '{EXACT}' or '{APPROXIMATED}'")
        return dyn

    @property
    def formats(self) -> list[str]:
        return list(self.data["output"]["formats"])

    # -- assembled objects -------------------------------------------------------

    def model(self) -> MixedTrafficModel:
        fleet = self.fleet()
        f = self.data["fleet"]
        eq = Equilibrium.from_velocity(float(f["v_star"]), fleet.baseline_params)
        b = self.data["learner"]["box"]["spacing"]
        try:
            return assemble_model(fleet, eq, fit_degree=int(f["fit_degree"]), spacing_bound=float(b),
                                  fit_bound=float(f["fit_bound"]))
        except (FitRejected, ValueError) as e:
            raise ConfigError(f"config key 'fleet': {e}") from e

    def setup(self, model: MixedTrafficModel) -> LearnerSetup:
        lo, hi = self.value_degree()
        return LearnerSetup(model, self.weights(), self.box(), monomial_basis(model.nx, lo, hi),
                            localize=self.data["learner"]["localize"], **self.solver())


# -- SVG plotting -------------------------------------------------------------------

HEAD_COLOR, HDV_COLOR, CAV_COLOR = "#000000", "#9a9a9a", "#1f5fd6"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    return [first + k * step for k in range(int((hi - first) / step + 1e-9) + 1)]


def svg_line_plot(series: Sequence[tuple[str, np.ndarray, np.ndarray, str]], title: str,
                  xlabel: str, ylabel: str, width: int = 720, height: int = 360) -> str:
    """Standalone SVG with one polyline per ``(label, x, y, color)`` entry."""
    ml, mr, mt, mb = 70, 150, 40, 50
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    if x1 <= x0:
        x1 = x0 + 1.0
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{title}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.1f}" y1="{mt + ph}" x2="{px(t):.1f}" y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(t):.1f}" y="{mt + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{ml - 5}" y1="{py(t):.1f}" x2="{ml}" y2="{py(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{py(t) + 4:.1f}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{ylabel}</text>')
    for k, (label, x, y, color) in enumerate(series):
        x, y = np.asarray(x, float), np.asarray(y, float)
        stride = max(1, x.size // 2000)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[::stride], y[::stride]))
        marker = x.size <= 60
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.4" points="{pts}"/>')
        if marker:
            out.extend(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" fill="{color}"/>'
                       for a, b in zip(x, y))
        ly = mt + 14 + 18 * k
        out.append(f'<line x1="{ml + pw + 12}" y1="{ly}" x2="{ml + pw + 36}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 42}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- output helpers -----------------------------------------------------------------

def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _prepare_out(cfg: RunConfig, out: str | None) -> str:
    d = out or cfg.data["output"]["dir"]
    os.makedirs(d, exist_ok=True)
    _write(os.path.join(d, "config.resolved.yaml"), cfg.dump())
    return d


def _load_artifact(path: str, model: MixedTrafficModel) -> Artifact:
    try:
        with open(path, encoding="utf-8") as fh:
            art = read_artifact(fh)
    except OSError as e:
        raise ConfigError(f"cannot read artifact: {e}") from e
    except (ValueError, KeyError, StopIteration) as e:
        raise ConfigError(f"malformed artifact {path}: {e}") from e
    fp = model.fingerprint()
    if art.fingerprint != fp:
        raise ConfigError(f"artifact {path} was learned for model {art.fingerprint or '?'}, "
                          f"the configured model is {fp}")
    return art


def velocity_profile(trace, model: MixedTrafficModel, name: str, out: str, formats: list[str],
                     title: str) -> None:
    """Absolute velocities of the head vehicle and every follower, CSV plus SVG."""
    v_star = model.equilibrium.v_star
    cols = [("head", trace.v_head, HEAD_COLOR)]
    for i in range(1, model.n + 1):
        kind = "CAV" if model.fleet.is_cav(i) and not trace.all_hdv else "HDV"
        color = CAV_COLOR if kind == "CAV" else HDV_COLOR
        cols.append((f"vehicle {i} ({kind})", v_star + trace.velocity(i), color))
    if "csv" in formats:
        header = ["t"] + [c[0].split(" (")[0].replace(" ", "") for c in cols]
        _write(os.path.join(out, f"{name}.csv"),
               _csv_text(header, (tuple(float(v) for v in row)
                                  for row in np.column_stack([trace.t] + [c[1] for c in cols]))))
    if "svg" in formats:
        # draw followers first so the head vehicle stays visible on top
        series = [(lbl, trace.t, y, col) for lbl, y, col in cols[1:]] + [(cols[0][0], trace.t, cols[0][1], cols[0][2])]
        _write(os.path.join(out, f"{name}.svg"),
               svg_line_plot(series, title, "time (s)", "velocity (m/s)"))


def _gain_rows(cfg: RunConfig, model: MixedTrafficModel, arts: list[tuple[str, Artifact]]):
    w, sc, wts = cfg.disturbance(), cfg.sim_config(), cfg.weights()
    rows = []
    for path, art in arts:
        gains = []
        for dyn in (APPROXIMATED, EXACT):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                tr = simulate(model, art.controller, w, sc, dynamics=dyn, weights=wts)
                gains.append(empirical_gain(tr).gamma)
        rows.append((os.path.basename(path), art.outer, art.gamma.gamma, gains[0], gains[1]))
    return rows


# -- commands -----------------------------------------------------------------------

def cmd_learn(cfg: RunConfig, out: str, verbose: bool = False) -> int:
    model = cfg.model()
    setup = cfg.setup(model)
    g = cfg.data["learner"]["initial_gains"]
    u0 = initial_controller(model, float(g["k_s"]), float(g["k_v"]))
    adir = os.path.join(out, "artifacts")
    os.makedirs(adir, exist_ok=True)
    status = EXIT_OK
    try:
        _, _, ilog = run(setup, u0, cfg.schedule(), verbose=verbose)
    except LearnerError as e:
        log.error("learning failed: %s", e)
        ilog = e.log
        status = EXIT_SOLVER
    if ilog is not None:
        for art in ilog.artifacts:
            with open(os.path.join(adir, f"controller_{art.outer:03d}.txt"), "w", encoding="utf-8") as fh:
                write_artifact(art, fh)
        buf = io.StringIO()
        ilog.write_csv(buf)
        _write(os.path.join(out, "iteration_log.csv"), buf.getvalue())
        series = [(a.outer, a.gamma.gamma) for a in ilog.artifacts]
        if series and "csv" in cfg.formats:
            _write(os.path.join(out, "gamma.csv"), _csv_text(["outer", "gamma"], series))
        if series and "svg" in cfg.formats:
            x, y = np.array(series, dtype=float).T
            _write(os.path.join(out, "gamma.svg"),
                   svg_line_plot([("certified gamma", x, y, CAV_COLOR)], "Attenuation level",
                                 "outer iteration", "gamma"))
        log.info("wrote %d controller artifacts to %s", len(ilog.artifacts), adir)
    return status


def cmd_simulate(cfg: RunConfig, out: str, artifact: str | None, all_hdv: bool) -> int:
    model = cfg.model()
    if all_hdv == (artifact is not None):
        raise ConfigError("simulate needs exactly one of --artifact or --all-hdv")
    ctrl, name, art = None, "all_hdv", None
    if artifact is not None:
        art = _load_artifact(artifact, model)
        ctrl, name = art.controller, os.path.splitext(os.path.basename(artifact))[0]
    w, sc, dyn = cfg.disturbance(), cfg.sim_config(), cfg.dynamics()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            tr = simulate(model, ctrl, w, sc, dynamics=dyn, all_hdv=all_hdv, weights=cfg.weights())
            gain = empirical_gain(tr) if np.any(tr.w != 0) else None
    except SimulationBlowUp as e:
        log.error("%s", e)
        return EXIT_BLOWUP
    for wn in caught:
        log.warning("%s", wn.message)
    buf = io.StringIO()
    tr.to_csv(buf)
    _write(os.path.join(out, f"trace_{name}.csv"), buf.getvalue())
    title = "All vehicles HDV" if all_hdv else f"Controller after {art.outer} iteration(s)"
    velocity_profile(tr, model, f"velocity_{name}", out, cfg.formats, title)
    lines = [f"controller: {name}", f"dynamics: {dyn}",
             f"certified_gamma: {art.gamma.gamma!r}" if art else "certified_gamma: null"]
    if gain is not None:
        lines += [f"z_energy: {gain.numerator!r}", f"w_energy: {gain.denominator!r}",
                  f"empirical_gamma: {gain.gamma!r}"]
    lines.append(f"peak_last_vehicle_deviation: {peak_deviation(tr, model.n)!r}")
    _write(os.path.join(out, f"gain_{name}.yaml"), "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, out: str, artifacts: list[str]) -> int:
    if not artifacts:
        raise ConfigError("evaluate needs at least one --artifact")
    model = cfg.model()
    arts = [(p, _load_artifact(p, model)) for p in artifacts]
    try:
        rows = _gain_rows(cfg, model, arts)
    except SimulationBlowUp as e:
        log.error("%s", e)
        return EXIT_BLOWUP
    header = ["artifact", "outer", "certified_gamma", "empirical_gamma_approx", "empirical_gamma_exact"]
    _write(os.path.join(out, "evaluation.csv"), _csv_text(header, rows))
    txt = [f"{'artifact':<28}{'outer':>6}{'certified':>14}{'emp(approx)':>14}{'emp(exact)':>14}"]
    txt += [f"{r[0]:<28}{r[1]:>6d}{r[2]:>14.6f}{r[3]:>14.6f}{r[4]:>14.6f}" for r in rows]
    _write(os.path.join(out, "evaluation.txt"), "\n".join(txt) + "\n")
    print("\n".join(txt))
    return EXIT_OK


def cmd_report(cfg: RunConfig, out: str, artifacts: list[str], verbose: bool = False) -> int:
    """Learn (unless artifacts are given), then the all-HDV, first and last
    controller velocity profiles and the gain table."""
    if not artifacts:
        status = cmd_learn(cfg, out, verbose)
        if status != EXIT_OK:
            return status
        adir = os.path.join(out, "artifacts")
        artifacts = sorted(os.path.join(adir, f) for f in os.listdir(adir) if f.endswith(".txt"))
    model = cfg.model()
    arts = sorted(((p, _load_artifact(p, model)) for p in artifacts), key=lambda pa: pa[1].outer)
    status = cmd_simulate(cfg, out, None, True)
    picks = [arts[0]] if len(arts) == 1 else [arts[0], arts[-1]]
    for p, _ in picks:
        status = max(status, cmd_simulate(cfg, out, p, False))
    if status != EXIT_OK:
        return status
    return cmd_evaluate(cfg, out, [p for p, _ in arts])


def cmd_stability(cfg: RunConfig, out: str, artifact: str | None, seed: int, count: int = 20) -> int:
    """Zero-disturbance runs of the approximated dynamics from random states in
    the box; reports the decay ratio and the largest per-step increase of V."""
    if artifact is None:
        raise ConfigError("stability needs --artifact")
    model = cfg.model()
    art = _load_artifact(artifact, model)
    box = cfg.box()
    rng = np.random.default_rng(seed)
    sc0 = cfg.sim_config()
    rows = []
    for j in range(count):
        x0 = box.sample(rng, 1)[0]
        sc = SimulationConfig(dt=sc0.dt, horizon=sc0.horizon, x0=tuple(x0), blowup=sc0.blowup)
        try:
            tr = simulate(model, art.controller, DisturbanceSignal.constant(0.0), sc, dynamics=APPROXIMATED)
        except SimulationBlowUp as e:
            log.error("%s", e)
            return EXIT_BLOWUP
        V = art.value.evaluate_many(tr.x)
        rows.append((j, float(np.linalg.norm(tr.x[-1]) / np.linalg.norm(x0)), float(np.max(np.diff(V)))))
    _write(os.path.join(out, "stability.csv"), _csv_text(["run", "decay_ratio", "max_dV"], rows))
    worst = max(r[1] for r in rows)
    print(f"{count} runs, seed {seed}: worst decay ratio {worst:.3e}, "
          f"largest V increase {max(r[2] for r in rows):.3e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="platoon-hinf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in (("learn", "run the learning algorithm and save one artifact per outer iteration"),
                      ("simulate", "simulate one controller artifact or the all-HDV baseline"),
                      ("evaluate", "certified and empirical gains for a list of artifacts"),
                      ("report", "learn (or load artifacts), then simulate and evaluate"),
                      ("stability", "zero-disturbance decay from random initial states")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", help="output directory (default: output.dir of the config)")
        p.add_argument("--artifact", action="append", default=[], help="controller artifact (repeatable)")
        p.add_argument("--all-hdv", action="store_true", help="replace every CAV by an HDV")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized scenarios")
        p.add_argument("--count", type=int, default=20, help="number of randomized runs (stability)")
        p.add_argument("--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        out = _prepare_out(cfg, args.out)
        if args.command == "learn":
            return cmd_learn(cfg, out, args.verbose)
        if args.command == "simulate":
            if len(args.artifact) > 1:
                raise ConfigError("simulate takes a single --artifact")
            return cmd_simulate(cfg, out, args.artifact[0] if args.artifact else None, args.all_hdv)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out, args.artifact)
        if args.command == "report":
            return cmd_report(cfg, out, args.artifact, args.verbose)
        return cmd_stability(cfg, out, args.artifact[0] if args.artifact else None, args.seed, args.count)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
