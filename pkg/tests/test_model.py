import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frozen import A0_SMOOTH
from oracles import SMOOTH_HISTORY_PARAMS, a_zero_quad, smooth_I, smooth_S
from immunoboost.equilibria import endemic_equilibrium
from immunoboost.model import (
    HistoryFunction,
    ModelParams,
    ParameterError,
    SpanError,
    StatePoint,
    a_functional,
    omega_tilde_membership,
    r0,
    rhs,
    warn_if_outside_omega_tilde,
)

rates = st.floats(0.01, 50.0)


def test_r0_examples():
    assert r0(ModelParams(255.3, 17.0, 0.02, 1.0, 15.0)) == pytest.approx(15.0, rel=1e-12)
    assert r0(ModelParams(3.7, 3.5, 0.2, 0.0, 1.0)) == 1.0
    assert r0(ModelParams(2.0, 1.0, 0.0, 0.0, 0.0)) == 2.0


@given(rates, rates, st.floats(0.0, 5.0))
def test_r0_monotone(beta, gamma, d):
    base = r0(ModelParams(beta, gamma, d, 0.0, 1.0))
    assert r0(ModelParams(beta * 1.01, gamma, d, 0.0, 1.0)) > base
    assert r0(ModelParams(beta, gamma * 1.01, d, 0.0, 1.0)) < base
    assert r0(ModelParams(beta, gamma, d + 0.01, 0.0, 1.0)) < base


@pytest.mark.parametrize("field,value", [
    ("beta", 0.0), ("gamma", -1.0), ("d", -0.1), ("nu", -1.0), ("tau", -2.0),
    ("beta", math.nan), ("tau", math.inf),
])
def test_params_rejects_invalid(field, value):
    kw = dict(beta=1.0, gamma=1.0, d=0.1, nu=0.5, tau=1.0)
    kw[field] = value
    with pytest.raises(ParameterError) as err:
        ModelParams(**kw)
    assert err.value.key == field


def test_params_dict_roundtrip_and_r0_form():
    p = ModelParams.from_dict({"r0": 15, "gamma": 17, "d": 0.02, "nu": 1, "tau": 15})
    assert p.beta == pytest.approx(255.3)
    assert ModelParams.from_dict(p.to_dict()) == p
    with pytest.raises(ParameterError):
        ModelParams.from_dict({"r0": 2, "beta": 1, "gamma": 1, "d": 0, "nu": 0, "tau": 1})
    with pytest.raises(ParameterError) as err:
        ModelParams.from_dict({"beta": 2, "gamma": 1, "d": 0, "nu": 0, "tau": 1, "mu": 3})
    assert err.value.key == "mu"
    with pytest.raises(ParameterError) as err:
        ModelParams.from_dict({"beta": 2, "gamma": 1, "d": 0, "nu": 0})
    assert err.value.key == "tau"


def test_rhs_examples():
    p = ModelParams(2.0, 1.0, 0.0, 0.0, 0.0)
    assert rhs(p, StatePoint(1, 0), StatePoint(1, 0), 0.0) == (0.0, 0.0)
    dS, dI = rhs(p, StatePoint(0.5, 0.25), StatePoint(0.5, 0.25), 0.0)
    assert dS == pytest.approx(0.0, abs=1e-15) and dI == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        rhs(p, StatePoint(1, 0), StatePoint(1, 0), -1e-3)


def test_rhs_vanishes_at_endemic_equilibrium():
    p = ModelParams(255.3, 17.0, 0.02, 1.0, 15.0)
    eq = endemic_equilibrium(p)
    x = StatePoint(eq.S_star, eq.I_star)
    dS, dI = rhs(p, x, x, p.tau * eq.I_star)
    assert math.hypot(dS, dI) < 1e-9


@given(st.floats(0.1, 30.0), st.floats(0.1, 20.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0),
       st.floats(0.0, 1.0))
def test_dI_factorization(r, gamma, d, S, frac):
    p = ModelParams.from_r0(r, gamma, d, 0.5, 1.0)
    I = frac * (1 - S)
    _, dI = rhs(p, StatePoint(S, I), StatePoint(S, I), 0.0)
    other = (d + gamma) * I * (p.r0 * S - 1)
    assert dI == pytest.approx(other, rel=1e-12, abs=1e-12 * p.beta)


def test_history_span_error_and_interpolation():
    h = HistoryFunction.linear((0.5, 0.1), (0.4, 0.2), 2.0)
    np.testing.assert_allclose(h(-1.0), [0.45, 0.15])
    with pytest.raises(SpanError):
        h(0.5)
    with pytest.raises(SpanError):
        h(-2.5)


def test_tabulated_history_reproduces_cubic_data_closely():
    t = np.linspace(-2, 0, 81)
    h = HistoryFunction.tabulated(t, 0.3 + 0.05 * np.sin(t), 0.1 + 0.02 * np.cos(2 * t))
    tt = np.linspace(-2, 0, 333)
    np.testing.assert_allclose(h(tt)[:, 0], 0.3 + 0.05 * np.sin(tt), atol=1e-5)
    np.testing.assert_allclose(h(t)[:, 1], 0.1 + 0.02 * np.cos(2 * t), atol=1e-15)


def test_omega_tilde_examples():
    p = ModelParams(3.0, 1.0, 0.1, 0.7, 2.0)
    assert omega_tilde_membership(p, HistoryFunction.constant(1.0, 0.0, p.tau)) == 0.0
    q = ModelParams(3.0, 1.0, 0.1, 0.0, 2.0)
    expected = 0.7 - 0.1 * q.gamma * (1 - math.exp(-q.d * q.tau)) / q.d
    got = omega_tilde_membership(q, HistoryFunction.constant(0.2, 0.1, q.tau))
    assert got == pytest.approx(expected, abs=1e-12)


def test_omega_tilde_matches_nested_quadrature_oracle():
    p = ModelParams(**SMOOTH_HISTORY_PARAMS)
    t = np.linspace(-p.tau, 0.0, 41)
    values = np.column_stack([0.3 + 0.05 * np.sin(t), 0.1 + 0.02 * np.cos(2 * t)])
    slopes = np.column_stack([0.05 * np.cos(t), -0.04 * np.sin(2 * t)])
    h = HistoryFunction(t, values, slopes)
    assert omega_tilde_membership(p, h) == pytest.approx(A0_SMOOTH, abs=1e-8)
    # PCHIP slopes are less accurate but still close
    coarse = HistoryFunction.tabulated(t, [smooth_S(x) for x in t], [smooth_I(x) for x in t])
    assert omega_tilde_membership(p, coarse) == pytest.approx(A0_SMOOTH, abs=1e-6)


def test_omega_tilde_at_endemic_constant_history_is_nonnegative():
    p = ModelParams(255.3, 17.0, 0.02, 1.0, 15.0)
    eq = endemic_equilibrium(p)
    h = HistoryFunction.constant(eq.S_star, eq.I_star, p.tau)
    a = omega_tilde_membership(p, h)
    ref = a_zero_quad(p.to_dict(), lambda t: eq.S_star, lambda t: eq.I_star)
    assert a == pytest.approx(ref, abs=1e-9)
    assert a >= -1e-9


def test_omega_tilde_requires_full_window():
    p = ModelParams(3.0, 1.0, 0.1, 0.7, 2.0)
    with pytest.raises(SpanError):
        omega_tilde_membership(p, HistoryFunction.constant(0.5, 0.1, 1.0))


def test_a_functional_at_zero_equals_membership():
    p = ModelParams(3.0, 1.0, 0.1, 0.7, 2.0)
    h = HistoryFunction.linear((0.5, 0.05), (0.4, 0.1), p.tau)
    assert a_functional(p, h, 0.0) == omega_tilde_membership(p, h)


def test_warns_outside_omega_tilde():
    p = ModelParams(30.0, 1.0, 0.1, 2.0, 2.0)
    h = HistoryFunction.constant(0.1, 0.8, p.tau)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        value = warn_if_outside_omega_tilde(p, h)
    assert value < 0 and caught
