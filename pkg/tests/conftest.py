"""Shared fixtures: the n = 3 reference model and the learner runs reused by
the acceptance suite.  Runs are session-scoped so each is computed once."""

import time

import pytest

from platoon_hinf.learner import (LearnerSetup, Schedule, default_box, default_value_basis,
                                  initial_controller, run)
from platoon_hinf.traffic import (Equilibrium, FleetConfig, OvmParams, PerformanceWeights,
                                  assemble_model)

V_STAR = 15.0

_summary: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Queue one pass/fail line for the terminal summary and print it."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    _summary.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _summary:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_summary, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


class TimedRun:
    def __init__(self, setup, schedule, u0=None):
        self.setup = setup
        self.schedule = schedule
        t0 = time.perf_counter()
        self.controller, self.gamma, self.log = run(setup, u0 or initial_controller(setup.model),
                                                    schedule)
        self.seconds = time.perf_counter() - t0


def paper_model(n=3, cavs=(1,), fit_degree=5):
    eq = Equilibrium.from_velocity(V_STAR, OvmParams())
    return assemble_model(FleetConfig.uniform(n, list(cavs)), eq, fit_degree=fit_degree)


def quadratic_setup(model):
    return LearnerSetup(model, PerformanceWeights(), default_box(model.n),
                        default_value_basis(model.nx, 2, 2))


@pytest.fixture(scope="session")
def model3():
    return paper_model()


@pytest.fixture(scope="session")
def setup3(model3):
    return quadratic_setup(model3)


@pytest.fixture(scope="session")
def run_5x5(setup3):
    return TimedRun(setup3, Schedule(i_max=5, k_max=5, tol_inner=0.0, tol_outer=0.0))


@pytest.fixture(scope="session")
def run_20(setup3):
    return TimedRun(setup3, Schedule(i_max=20, k_max=5, tol_inner=0.0, tol_outer=0.0))


@pytest.fixture(scope="session")
def run_smoke_n6():
    return TimedRun(quadratic_setup(paper_model(6, (1, 4))),
                    Schedule(i_max=3, k_max=5, tol_outer=0.0))
