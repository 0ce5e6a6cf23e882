import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platoon_hinf.traffic import (Equilibrium, FitRejected, FleetConfig, OvmParams,
                                  PerformanceWeights, assemble_model, desired_velocity,
                                  equilibrium_spacing, hdv_acceleration, performance_output)

P = OvmParams()


def test_desired_velocity_branches():
    assert desired_velocity(P.s_st, P) == 0.0
    assert desired_velocity(P.s_go, P) == P.v_max
    assert desired_velocity(2.0, P) == 0.0
    assert desired_velocity(100.0, P) == P.v_max
    assert desired_velocity(20.0, P) == pytest.approx(15.0, abs=1e-12)


def test_equilibrium_spacing_examples():
    assert equilibrium_spacing(15.0, P) == pytest.approx(20.0, abs=1e-12)
    assert equilibrium_spacing(1e-9, P) == pytest.approx(P.s_st, abs=1e-3)
    for bad in (0.0, P.v_max, -1.0):
        with pytest.raises(ValueError):
            equilibrium_spacing(bad, P)


@settings(max_examples=50, deadline=None)
@given(st.floats(1, 10), st.floats(11, 60), st.floats(5, 40))
def test_midpoint_symmetry(s_st, s_go, v_max):
    p = OvmParams(s_st=s_st, s_go=s_go, v_max=v_max)
    assert equilibrium_spacing(v_max / 2, p) == pytest.approx((s_st + s_go) / 2, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99))
def test_spacing_inverts_desired_velocity(frac):
    v = frac * P.v_max
    assert desired_velocity(equilibrium_spacing(v, P), P) == pytest.approx(v, rel=1e-10, abs=1e-10)


def test_hdv_acceleration_examples():
    eq = Equilibrium.from_velocity(15.0, P)
    assert hdv_acceleration(0.0, 0.0, 0.0, P, eq) == pytest.approx(0.0, abs=1e-12)
    assert hdv_acceleration(1e3, 0.0, 0.0, P, eq) == pytest.approx(P.alpha * (P.v_max - 15.0))
    p0 = OvmParams(beta=0.0)
    assert hdv_acceleration(0.0, 1.0, 0.0, p0, eq) == pytest.approx(-p0.alpha, abs=1e-12)


def test_performance_output_examples():
    w = PerformanceWeights()
    assert performance_output(np.zeros(6), [0.0], w)[1] == 0.0
    assert performance_output(np.eye(6)[1], [0.0], w)[1] == pytest.approx(0.0225)
    assert performance_output(np.zeros(6), [1.0], w)[1] == pytest.approx(1.0)


@pytest.fixture(scope="module")
def model3():
    return assemble_model(FleetConfig.uniform(3, [1]), Equilibrium.from_velocity(15.0, P))


def test_input_and_disturbance_columns(model3):
    np.testing.assert_array_equal(model3.g[:, 0], [0, 1, 0, 0, 0, 0])
    np.testing.assert_array_equal(model3.k, [1, 0, 0, 0, 0, 0])


def test_equilibrium_is_a_fixed_point(model3):
    for exact in (True, False):
        np.testing.assert_allclose(model3.rhs(np.zeros(6), [0.0], 0.0, exact=exact), 0.0, atol=1e-12)


def test_all_cav_fleet_has_no_ovm_terms():
    m = assemble_model(FleetConfig.uniform(2, [1, 2]), Equilibrium.from_velocity(15.0, P))
    for p in m.f:
        assert p.degree() <= 1
        assert all(abs(c) == 1.0 for c in p.terms.values())


def test_polynomial_drift_matches_numeric_rhs(model3):
    rng = np.random.default_rng(3)
    for x in rng.uniform(-3, 3, size=(20, 6)):
        np.testing.assert_allclose(model3.drift(x), model3.rhs(x, [0.0], 0.0, exact=False), atol=1e-10)


def test_fit_gap_bounded_by_fit_residual(model3):
    rng = np.random.default_rng(4)
    bound = P.alpha * model3.fit_residual + 1e-12
    for x in rng.uniform(-4, 4, size=(200, 6)):
        d = model3.rhs(x, [0.0], 0.0, exact=True) - model3.rhs(x, [0.0], 0.0, exact=False)
        assert np.max(np.abs(d)) <= bound


def test_fit_residual_below_default_bound(model3):
    assert 0 < model3.fit_residual < 0.5


def test_fit_rejection():
    with pytest.raises(FitRejected):
        assemble_model(FleetConfig.uniform(3, [1]), Equilibrium.from_velocity(15.0, P),
                       fit_degree=1, spacing_bound=10.0, fit_bound=0.01)


def test_fleet_validation():
    with pytest.raises(ValueError):
        FleetConfig.uniform(3, [2])
    with pytest.raises(ValueError):
        FleetConfig.uniform(3, [1, 4])
    with pytest.raises(ValueError):
        FleetConfig(3, (1,), {2: P})


def test_fingerprint_tracks_model_changes(model3):
    eq = Equilibrium.from_velocity(15.0, P)
    same = assemble_model(FleetConfig.uniform(3, [1]), eq)
    other = assemble_model(FleetConfig.uniform(3, [1], OvmParams(alpha=0.5)), eq)
    assert model3.fingerprint() == same.fingerprint() != other.fingerprint()


def test_all_hdv_rhs_uses_baseline_law(model3):
    x = np.array([1.0, 0.5, -0.5, 0.2, 0.3, -0.1])
    d = model3.rhs(x, [100.0], 0.3, all_hdv=True)
    eq = model3.equilibrium
    assert d[1] == pytest.approx(hdv_acceleration(x[0], x[1], 0.3, P, eq))
    assert d[0] == pytest.approx(0.3 - x[1])


def test_heterogeneous_hdv_params():
    fl = FleetConfig(3, (1,), {2: OvmParams(alpha=0.4, beta=1.1), 3: P})
    m = assemble_model(fl, Equilibrium.from_velocity(15.0, P))
    x = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    assert m.rhs(x, [0.0], 0.0)[3] == pytest.approx(-0.4 - 1.1)
    assert math.isfinite(m.fit_residual)
