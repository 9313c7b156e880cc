import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from frozen import I_STAR_REF, I_STAR_REF_NU48
from oracles import REF, REF_NU48
from immunoboost.equilibria import (
    EPS,
    EquilibriumError,
    Kind,
    Method,
    curve_y2,
    curve_y2_argmax,
    curve_y2_prime,
    dfe,
    endemic_equilibrium,
    equilibrium_residual,
    find_equilibrium,
    intersection_coefficients,
    intersection_gap,
    tau0_equilibrium,
)
from immunoboost.model import ModelParams


def test_subthreshold_has_no_endemic_state():
    p = ModelParams.from_r0(0.9, 2.0, 0.1, 1.0, 3.0)
    assert endemic_equilibrium(p) is None
    eq = find_equilibrium(p)
    assert eq.kind is Kind.DFE and (eq.S_star, eq.I_star) == (1.0, 0.0)
    assert eq.residual == (0.0, 0.0)


def test_threshold_exactly_one_is_absent():
    assert endemic_equilibrium(ModelParams(3.7, 3.5, 0.2, 0.5, 1.0)) is None


def test_nu_zero_closed_form():
    p = ModelParams.from_r0(3.0, 2.0, 0.1, 0.0, 5.0)
    eq = endemic_equilibrium(p)
    expected = p.d * (1 - 1 / 3.0) / (p.gamma + p.d - p.gamma * math.exp(-p.d * p.tau))
    assert eq.method is Method.CLOSED_FORM
    assert eq.S_star == pytest.approx(1 / 3.0, rel=1e-15)
    assert eq.I_star == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("params,frozen", [(REF, I_STAR_REF), (REF_NU48, I_STAR_REF_NU48)])
def test_reference_equilibrium_matches_oracle(params, frozen):
    p = ModelParams(**params)
    eq = endemic_equilibrium(p)
    assert eq.method is Method.BISECTION
    assert eq.S_star == pytest.approx(1 / 15, rel=1e-12)
    assert eq.I_star == pytest.approx(frozen, rel=1e-12)
    assert abs(intersection_gap(p, eq.I_star)) < 1e-12
    assert max(abs(r) for r in eq.residual) < 1e-10


def test_tau0_examples():
    eq = tau0_equilibrium(ModelParams(2.0, 1.0, 0.0, 0.0, 0.0))
    assert (eq.S_star, eq.I_star) == (0.5, 0.5)
    assert tau0_equilibrium(ModelParams(2.0, 2.0, 0.0, 0.3, 0.0)) is None
    eq = tau0_equilibrium(ModelParams(255.3, 17.0, 0.02, 0.5, 0.0))
    assert eq.S_star == pytest.approx(1 / 15) and eq.I_star == pytest.approx(14 / 15)
    assert abs(eq.quadratic_residual) < 1e-12
    with pytest.raises(ValueError):
        tau0_equilibrium(ModelParams(2.0, 1.0, 0.0, 0.0, 1.0))


def test_residual_examples():
    p = ModelParams(255.3, 17.0, 0.02, 1.0, 15.0)
    assert equilibrium_residual(p, 1.0, 0.0) == (0.0, 0.0)
    # zero up to the rounding of 1/R0
    assert abs(equilibrium_residual(p, 1 / p.r0, 0.3)[1]) <= 4 * EPS * p.beta


def test_dfe_record():
    eq = dfe(ModelParams(2.0, 1.0, 0.1, 0.0, 1.0))
    assert eq.to_dict()["kind"] == "DFE"


def test_degenerate_nu_and_d_zero_raises():
    with pytest.raises(EquilibriumError):
        endemic_equilibrium(ModelParams(3.0, 1.0, 0.0, 0.0, 2.0))


@pytest.mark.parametrize("nu", [5e-324, 1e-200, 1e-8, 0.3, 5.0])
def test_no_mortality_small_boosting_limit(nu):
    p = ModelParams.from_r0(2.0, 1.0, 0.0, nu, 1.0)
    eq = endemic_equilibrium(p)
    r1, r2 = equilibrium_residual(p, eq.S_star, eq.I_star)
    assert max(abs(r1), abs(r2)) < 1e-12
    if nu < 1e-6:
        # limit (1 - 1/R0) / (1 + gamma tau) as the boosting force vanishes
        assert eq.I_star == pytest.approx(0.25, rel=1e-7)


endemic = st.builds(
    ModelParams.from_r0,
    st.floats(1.05, 15.0), st.floats(1.0, 17.0), st.floats(0.0, 0.5), st.floats(0.0, 6.0), st.floats(0.0, 20.0),
)


@settings(max_examples=60, deadline=None)
@given(endemic)
def test_endemic_residual_and_bounds(p):
    assume(p.nu > 0 or p.d > 0 or p.tau == 0)
    eq = endemic_equilibrium(p)
    assert eq.kind is Kind.ENDEMIC
    # strict for tau > 0 analytically; tiny tau reaches the bound to rounding
    assert 0 < eq.I_star <= 1 - eq.S_star + 4 * EPS
    r1, r2 = equilibrium_residual(p, eq.S_star, eq.I_star)
    assert max(abs(r1), abs(r2)) < 1e-10 * max(1.0, p.beta)


@settings(max_examples=25, deadline=None)
@given(st.floats(1.05, 15.0), st.floats(1.0, 17.0), st.floats(0.001, 0.5), st.floats(0.01, 6.0),
       st.floats(0.1, 20.0))
def test_single_sign_change(r, gamma, d, nu, tau):
    p = ModelParams.from_r0(r, gamma, d, nu, tau)
    c = intersection_coefficients(p)
    end = c.rho / c.kappa
    # dense near 0 as well, where I* sits when R0 is close to 1
    xs = np.union1d(np.linspace(0.0, end, 20001)[1:], np.geomspace(1e-12 * end, end, 2001))
    g = np.array([intersection_gap(p, x) for x in xs])
    assert np.count_nonzero(np.diff(np.sign(g)) != 0) == 1


@settings(max_examples=25, deadline=None)
@given(st.floats(1.05, 15.0), st.floats(1.0, 17.0), st.floats(0.001, 0.5), st.floats(0.01, 6.0),
       st.floats(0.1, 20.0))
def test_curve_shape(r, gamma, d, nu, tau):
    p = ModelParams.from_r0(r, gamma, d, nu, tau)
    c = intersection_coefficients(p)
    end = c.rho / c.kappa
    assert curve_y2(p, 0.0) == 0.0
    assert abs(curve_y2(p, end)) <= 1e-12 * c.rho
    assert min(curve_y2(p, x) for x in np.linspace(0, end, 101)) >= -1e-12 * c.rho
    x1 = curve_y2_argmax(p)
    assert 0 < x1 < end
    h = 1e-6 * end
    fd = (curve_y2(p, x1 + h) - curve_y2(p, x1 - h)) / (2 * h)
    scale = max(abs(curve_y2_prime(p, 0.0)), 1e-300)
    assert abs(fd) < 1e-4 * scale
    assert abs(curve_y2_prime(p, x1)) < 1e-9 * scale


def test_continuity_in_tau():
    base = dict(r0=4.0, gamma=2.0, d=0.1, nu=0.8)
    target = 1 - 1 / 4.0
    gaps = []
    for tau in (1e-3, 1e-4, 1e-5):
        p = ModelParams.from_r0(base["r0"], base["gamma"], base["d"], base["nu"], tau)
        gaps.append(abs(endemic_equilibrium(p).I_star - target))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3
