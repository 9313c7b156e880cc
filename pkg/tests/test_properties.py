"""Randomized cross-module properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from immunoboost.equilibria import endemic_equilibrium
from immunoboost.model import HistoryFunction, ModelParams, omega_tilde_membership
from immunoboost.simulator import Monitors, SimulationConfig, default_step, monitor_invariants, simulate
from immunoboost.spectrum import StabilityClass, classify
from immunoboost.verify import random_omega_history

QUIET = Monitors(False, False, False)


def test_omega_tilde_invariance_100_histories():
    rng = np.random.default_rng(101)
    for _ in range(100):
        p = ModelParams.from_r0(rng.uniform(0.5, 8.0), rng.uniform(1.0, 10.0), rng.uniform(0.01, 0.5),
                                rng.uniform(0.0, 2.0), rng.uniform(0.5, 5.0))
        h = random_omega_history(p, rng)
        assert omega_tilde_membership(p, h) >= 0
        # outbreak spikes after deep troughs need a finer step than the default for the identity tolerance
        tr = simulate(p, SimulationConfig(20 * p.tau, step=default_step(p) / 8, history=h,
                                          monitors=Monitors(True, False, False)))
        assert (tr.S + tr.I).max() <= 1 + 1e-6
        assert monitor_invariants(p, tr).exp_identity_rel_error < 1e-6


def test_simulation_agrees_with_spectrum():
    """Perturbed equilibria decay exactly when the rightmost root is in the left half-plane."""
    rng = np.random.default_rng(202)
    checked = {StabilityClass.ENDEMIC_STABLE: 0, StabilityClass.ENDEMIC_UNSTABLE: 0}
    while sum(checked.values()) < 50:
        p = ModelParams.from_r0(rng.uniform(2.0, 15.0), rng.uniform(1.0, 20.0), rng.uniform(0.01, 0.3),
                                rng.uniform(0.0, 2.0), rng.uniform(0.5, 10.0))
        c = classify(p)
        # near-marginal cases would need very long runs to separate
        if abs(c.rightmost_re) < 1e-2:
            continue
        eq = endemic_equilibrium(p)
        t_end = min(max(12 / abs(c.rightmost_re), 10 * p.tau), 3000.0)
        h = HistoryFunction.constant(eq.S_star * (1 - 1e-3), eq.I_star, p.tau)
        tr = simulate(p, SimulationConfig(t_end, history=h, monitors=QUIET))
        tail = tr.times >= 0.9 * t_end
        deviation = np.max(np.abs(tr.I[tail] - eq.I_star)) / eq.I_star
        decays = deviation < 1e-3
        assert decays == (c.cls is StabilityClass.ENDEMIC_STABLE), (p, c.rightmost_re, deviation)
        checked[c.cls] += 1
    assert min(checked.values()) >= 5


@settings(max_examples=20, deadline=None)
@given(st.floats(1.1, 15.0), st.floats(1.0, 17.0), st.floats(0.01, 0.3), st.floats(0.0, 5.0),
       st.floats(0.5, 15.0))
def test_spectrum_contracts(r0, gamma, d, nu, tau):
    p = ModelParams.from_r0(r0, gamma, d, nu, tau)
    c = classify(p, check_convergence=False)
    assert c.cls in (StabilityClass.ENDEMIC_STABLE, StabilityClass.ENDEMIC_UNSTABLE, StabilityClass.MARGINAL)
    if c.cls is StabilityClass.ENDEMIC_UNSTABLE:
        assert c.unstable_pairs >= 1


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_a_functional_decay_law(seed):
    rng = np.random.default_rng(seed)
    p = ModelParams.from_r0(rng.uniform(1.5, 5.0), rng.uniform(1.0, 5.0), rng.uniform(0.05, 0.5),
                            rng.uniform(0.1, 2.0), rng.uniform(0.5, 3.0))
    h = random_omega_history(p, rng)
    tr = simulate(p, SimulationConfig(10 * p.tau, history=h))
    rep = monitor_invariants(p, tr)
    assert rep.a_functional_rel_error < 1e-7
    assert np.min(tr.monitor_log["A"]) >= -1e-8
