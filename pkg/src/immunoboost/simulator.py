"""Fixed-step integration of the delay system by the method of steps.

The step ``h`` divides ``tau`` exactly, so every multiple of ``tau`` (where
derivative jumps propagate from t=0) is a grid point. Delayed values at
half steps come from the cubic Hermite interpolant of the stored solution,
and the trailing integral of I is carried as an extra state during a step
and then replaced by an exact Hermite update (new segment in, expired
segment out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import HistoryFunction, ModelParams, StatePoint, r0, warn_if_outside_omega_tilde

STATE_TOL = 1e-6
RECOMPUTE_EVERY = 1000
DEFAULT_STEPS_PER_TAU = 200

# integrals of the cubic Hermite basis over the first half of a unit segment
_HALF_Y0, _HALF_Y1 = 13.0 / 32.0, 3.0 / 32.0
_HALF_M0, _HALF_M1 = 11.0 / 192.0, -5.0 / 192.0


class SimulationError(RuntimeError):
    """The state left the admissible box; carries the time and state."""

    def __init__(self, message: str, t: float | None = None, state: tuple | None = None):
        super().__init__(message)
        self.t = t
        self.state = state


@dataclass(frozen=True)
class Monitors:
    invariants: bool = True
    a_functional: bool = True
    liminf: bool = True


def default_step(params: ModelParams) -> float:
    """``min(tau/200, 0.25/beta)`` shrunk so that it divides tau."""
    h = 0.25 / params.beta
    if params.tau == 0:
        return h
    h = min(params.tau / DEFAULT_STEPS_PER_TAU, h)
    m = math.ceil(params.tau / h - 1e-9)
    return params.tau / m


def default_history(params: ModelParams, I0: float = 1e-3) -> HistoryFunction:
    """Constant history with infective fraction ``I0`` inside the invariant set.

    The recovered fraction is set slightly above the value that makes the
    window functional vanish for a constant history.
    """
    beta, gamma, d, nu, tau = params.beta, params.gamma, params.d, params.nu, params.tau
    c = d + nu * beta * I0
    q = tau if c * tau < 1e-12 else -math.expm1(-c * tau) / c
    denom = 1.0 - nu * beta * I0 * q
    R = gamma * I0 * q / denom if denom > 0 else math.inf
    R = 1.01 * R
    if not R + I0 < 1.0:
        raise ValueError(f"no constant history with I = {I0} lies in the invariant set")
    return HistoryFunction.constant(1.0 - I0 - R, I0, tau)


@dataclass
class SimulationConfig:
    """Run settings.

    ``step`` defaults to :func:`default_step`; ``history`` defaults to
    :func:`default_history`. ``record_every`` keeps every k-th node in the
    returned trajectory.
    """

    t_end: float
    step: float | None = None
    history: HistoryFunction | None = None
    monitors: Monitors = field(default_factory=Monitors)
    record_every: int = 1
    state_tol: float = STATE_TOL

    def resolve_step(self, params: ModelParams) -> tuple[float, int]:
        """Return ``(h, m)`` with ``m = tau/h`` (0 when tau = 0)."""
        h = default_step(params) if self.step is None else float(self.step)
        if not (h > 0 and math.isfinite(h)):
            raise ValueError(f"step must be positive and finite, got {h}")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be positive and finite, got {self.t_end}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if params.tau == 0:
            return h, 0
        ratio = params.tau / h
        m = round(ratio)
        if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"tau/h must be an integer, got tau/h = {ratio!r}")
        return params.tau / m, m


@dataclass
class Trajectory:
    """Solution samples on ``[0, t_end]`` plus a dense interpolant.

    ``dense`` covers ``[-tau, t_end]`` (the history resampled on the step
    grid followed by the computed solution) at the recorded resolution.
    """

    params: ModelParams
    times: np.ndarray
    S: np.ndarray
    I: np.ndarray
    dense: HistoryFunction
    step: float
    monitor_log: dict = field(default_factory=dict)

    @property
    def states(self) -> list[StatePoint]:
        return [StatePoint(float(s), float(i)) for s, i in zip(self.S, self.I)]

    @property
    def R(self) -> np.ndarray:
        return 1.0 - self.S - self.I

    @property
    def final(self) -> StatePoint:
        return StatePoint(float(self.S[-1]), float(self.I[-1]))


def _check_history(params: ModelParams, history: HistoryFunction, tol: float) -> None:
    lo, hi = history.span
    if hi != 0.0 or lo > -params.tau + 1e-12 * max(1.0, params.tau):
        raise ValueError(f"history must cover [-tau, 0] = [{-params.tau}, 0], got [{lo}, {hi}]")
    if history.check_state_bounds() > tol:
        raise ValueError("history leaves the state region S, I >= 0, S + I <= 1")


def simulate(params: ModelParams, config: SimulationConfig) -> Trajectory:
    """Integrate the delay system with classical RK4 and Hermite dense output.

    Raises
    ------
    ValueError
        For an invalid configuration (including tau/h not an integer) or a
        history outside the state region.
    SimulationError
        When S or I leaves ``[-state_tol, 1 + state_tol]``.
    """
    h, m = config.resolve_step(params)
    if params.tau == 0:
        history = config.history if config.history is not None else default_history(params)
        S0, I0 = history(0.0)
        start = StatePoint(float(S0), float(I0))
        traj = simulate_tau0(params, start, config.t_end, h, record_every=_stride(config),
                             state_tol=config.state_tol)
        return _finish(traj, config)

    history = config.history
    if history is None:
        history = default_history(params)
    _check_history(params, history, config.state_tol)
    warn_if_outside_omega_tilde(params, history)

    beta, gamma, d, nu, tau = params.beta, params.gamma, params.d, params.nu, params.tau
    gd = gamma + d
    nb = nu * beta
    decay = math.exp(-d * tau)
    lo_bound, hi_bound = -config.state_tol, 1.0 + config.state_tol

    def f(S, I, Sd, Id, J):
        inflow = Id * (gamma + nb * (1.0 - Sd - Id)) * decay * math.exp(-nb * J)
        bsi = beta * I * S
        return d * (1.0 - S) - bsi + inflow, bsi - gd * I

    # history on the step grid: nodes -m..0
    hist_t = np.linspace(-tau, 0.0, m + 1)
    hist = history.resample(hist_t)
    size = m + 2
    bS = [0.0] * size
    bI = [0.0] * size
    # derivatives entering a segment from the right of its left node (r) and
    # from the left of its right node (l); they differ only at t = 0
    bdSr = [0.0] * size
    bdIr = [0.0] * size
    bdSl = [0.0] * size
    bdIl = [0.0] * size
    for j in range(m + 1):
        k = j - m
        p = k % size
        bS[p], bI[p] = float(hist.values[j, 0]), float(hist.values[j, 1])
        bdSr[p], bdIr[p] = float(hist.deriv_right[j, 0]), float(hist.deriv_right[j, 1])
        bdSl[p], bdIl[p] = float(hist.deriv_left[j, 0]), float(hist.deriv_left[j, 1])

    h2, h12 = 0.5 * h, h * h / 12.0

    def seg_I(k):
        a, b = k % size, (k + 1) % size
        return h2 * (bI[a] + bI[b]) + h12 * (bdIr[a] - bdIl[b])

    def window_integral(n):
        return math.fsum(seg_I(k) for k in range(n - m, n))

    J = window_integral(0)
    S, I = bS[0], bI[0]
    # the solution leaves t = 0 with the vector field, not the history slope
    dS0, dI0 = f(S, I, bS[(-m) % size], bI[(-m) % size], J)
    bdSr[0], bdIr[0] = dS0, dI0

    n_steps = math.ceil(config.t_end / h - 1e-9)
    stride = _stride(config)
    rec_t = [0.0]
    rec = [(S, I, bdSl[0], bdIl[0], dS0, dI0)]
    k1S, k1I = dS0, dI0

    for n in range(n_steps):
        a = (n - m) % size
        b = (n - m + 1) % size
        Sa, Ia, Sb, Ib = bS[a], bI[a], bS[b], bI[b]
        Sm = 0.5 * (Sa + Sb) + h * (bdSr[a] - bdSl[b]) / 8.0
        Im = 0.5 * (Ia + Ib) + h * (bdIr[a] - bdIl[b]) / 8.0
        kJ1 = I - Ia
        S2, I2, J2 = S + h2 * k1S, I + h2 * k1I, J + h2 * kJ1
        k2S, k2I = f(S2, I2, Sm, Im, J2)
        kJ2 = I2 - Im
        S3, I3, J3 = S + h2 * k2S, I + h2 * k2I, J + h2 * kJ2
        k3S, k3I = f(S3, I3, Sm, Im, J3)
        kJ3 = I3 - Im
        S4, I4, J4 = S + h * k3S, I + h * k3I, J + h * kJ3
        k4S, k4I = f(S4, I4, Sb, Ib, J4)
        S = S + h * (k1S + 2.0 * (k2S + k3S) + k4S) / 6.0
        I = I + h * (k1I + 2.0 * (k2I + k3I) + k4I) / 6.0
        t = (n + 1) * h
        if not (lo_bound <= S <= hi_bound and lo_bound <= I <= hi_bound):
            raise SimulationError(
                f"state left [{lo_bound}, {hi_bound}] at t = {t:.6g}: S = {S!r}, I = {I!r}; "
                "the initial history may lie outside the invariant set or the step is too large",
                t=t, state=(S, I))
        expired = seg_I(n - m)
        p = (n + 1) % size
        bS[p], bI[p] = S, I
        # dI does not involve J, so the new segment integral is available first
        dI = beta * I * S - gd * I
        bdIr[p] = bdIl[p] = dI
        J = J + seg_I(n) - expired
        if (n + 1) % RECOMPUTE_EVERY == 0:
            J = window_integral(n + 1)
        J = max(J, 0.0)
        dS, _ = f(S, I, Sb, Ib, J)
        bdSr[p] = bdSl[p] = dS
        k1S, k1I = dS, dI
        if (n + 1) % stride == 0 or n + 1 == n_steps:
            rec_t.append(t)
            rec.append((S, I, dS, dI, dS, dI))

    times = np.array(rec_t)
    data = np.array(rec)
    grid = np.concatenate([hist_t[:-1], times])
    values = np.vstack([hist.values[:-1], data[:, 0:2]])
    left = np.vstack([hist.deriv_left[:-1], data[:, 2:4]])
    right = np.vstack([hist.deriv_right[:-1], data[:, 4:6]])
    dense = HistoryFunction(grid, values, left, right)
    traj = Trajectory(params, times, data[:, 0].copy(), data[:, 1].copy(), dense, h)
    return _finish(traj, config)


def _stride(config: SimulationConfig) -> int:
    # monitors need the full-resolution solution; thinning happens afterwards
    m = config.monitors
    return 1 if (m.invariants or m.a_functional or m.liminf) else config.record_every


def _finish(traj: Trajectory, config: SimulationConfig) -> Trajectory:
    m = config.monitors
    if not (m.invariants or m.a_functional or m.liminf):
        return traj
    _attach_monitors(traj, m)
    if m.invariants and m.a_functional:
        traj.monitor_log["report"] = monitor_invariants(traj.params, traj)
    every = config.record_every
    if every == 1:
        return traj
    n = len(traj.times)
    idx = np.unique(np.concatenate([np.arange(0, n, every), [n - 1]]))
    dense = traj.dense
    n_hist = len(dense.grid) - n
    keep = np.concatenate([np.arange(n_hist), n_hist + idx])
    thin_dense = HistoryFunction(dense.grid[keep], dense.values[keep], dense.deriv_left[keep],
                                 dense.deriv_right[keep])
    log = {k: (v[idx] if isinstance(v, np.ndarray) and v.shape == (n,) else v)
           for k, v in traj.monitor_log.items()}
    return Trajectory(traj.params, traj.times[idx], traj.S[idx], traj.I[idx], thin_dense, traj.step, log)


def simulate_tau0(params: ModelParams, initial: StatePoint, t_end: float, step: float | None = None,
                  record_every: int = 1, state_tol: float = STATE_TOL) -> Trajectory:
    """RK4 on the delay-free system (tau = 0).

    The step is shrunk so that a whole number of steps reaches ``t_end``.
    """
    if params.tau != 0:
        raise ValueError(f"simulate_tau0 requires tau = 0, got tau = {params.tau}")
    if not (t_end > 0 and math.isfinite(t_end)):
        raise ValueError(f"t_end must be positive and finite, got {t_end}")
    h = default_step(params) if step is None else float(step)
    if not (h > 0 and math.isfinite(h)):
        raise ValueError(f"step must be positive and finite, got {h}")
    S, I = float(initial.S), float(initial.I)
    if min(S, I) < -state_tol or S + I > 1.0 + state_tol:
        raise ValueError(f"initial state ({S}, {I}) is outside S, I >= 0, S + I <= 1")
    n_steps = math.ceil(t_end / h - 1e-9)
    h = t_end / n_steps
    beta, gamma, d, nu = params.beta, params.gamma, params.d, params.nu
    gd, nb = gamma + d, nu * beta
    lo_bound, hi_bound = -state_tol, 1.0 + state_tol

    def f(S, I):
        bsi = beta * I * S
        return d * (1.0 - S) - bsi + I * (gamma + nb * (1.0 - S - I)), bsi - gd * I

    h2 = 0.5 * h
    dS, dI = f(S, I)
    rec_t = [0.0]
    rec = [(S, I, dS, dI)]
    for n in range(n_steps):
        k1S, k1I = dS, dI
        k2S, k2I = f(S + h2 * k1S, I + h2 * k1I)
        k3S, k3I = f(S + h2 * k2S, I + h2 * k2I)
        k4S, k4I = f(S + h * k3S, I + h * k3I)
        S = S + h * (k1S + 2.0 * (k2S + k3S) + k4S) / 6.0
        I = I + h * (k1I + 2.0 * (k2I + k3I) + k4I) / 6.0
        t = (n + 1) * h
        if not (lo_bound <= S <= hi_bound and lo_bound <= I <= hi_bound and S + I <= hi_bound):
            raise SimulationError(f"state left the region S, I >= 0, S + I <= 1 at t = {t:.6g}: "
                                  f"S = {S!r}, I = {I!r}", t=t, state=(S, I))
        dS, dI = f(S, I)
        if (n + 1) % record_every == 0 or n + 1 == n_steps:
            rec_t.append(t)
            rec.append((S, I, dS, dI))
    times = np.array(rec_t)
    data = np.array(rec)
    dense = HistoryFunction(times, data[:, :2], data[:, 2:])
    return Trajectory(params, times, data[:, 0].copy(), data[:, 1].copy(), dense, h)


def liminf_estimate(traj: Trajectory, window_fraction: float = 1.0 / 3.0) -> float:
    """Minimum of I over the last ``window_fraction`` of the run."""
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must be in (0, 1]")
    t0, t1 = traj.times[0], traj.times[-1]
    mask = traj.times >= t1 - window_fraction * (t1 - t0)
    if t1 <= t0 or mask.sum() < 2:
        raise ValueError("liminf window is empty; run longer or widen the window")
    return float(traj.I[mask].min())


def _hermite_cumulative(grid, f, df_left, df_right, origin: int) -> np.ndarray:
    """Cumulative integral of a cubic Hermite interpolant, zero at ``grid[origin]``."""
    h = np.diff(grid)
    seg = 0.5 * h * (f[:-1] + f[1:]) + h * h * (df_right[:-1] - df_left[1:]) / 12.0
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return cum - cum[origin]


def _a_functional_series(params: ModelParams, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """``A(t)`` at the recorded times and the cumulative rate integral.

    The trailing-window integral is propagated from one node to the next
    (decay by the rate, add the new segment, drop the expired one), which
    costs O(1) per node. Nodes whose window start is not a grid node fall
    back to direct quadrature.
    """
    from .model import window_functional

    beta, gamma, d, nu, tau = params.beta, params.gamma, params.d, params.nu, params.tau
    dense = traj.dense
    grid = dense.grid
    S, I = dense.values[:, 0], dense.values[:, 1]
    dSl, dIl = dense.deriv_left[:, 0], dense.deriv_left[:, 1]
    dSr, dIr = dense.deriv_right[:, 0], dense.deriv_right[:, 1]
    origin = int(np.searchsorted(grid, 0.0))
    nb = nu * beta
    Lam = _hermite_cumulative(grid, d + nb * I, nb * dIl, nb * dIr, origin)
    if tau == 0:
        return 1.0 - traj.S - traj.I, Lam[origin:]

    h = np.diff(grid)
    Sm = 0.5 * (S[:-1] + S[1:]) + h * (dSr[:-1] - dSl[1:]) / 8.0
    Im = 0.5 * (I[:-1] + I[1:]) + h * (dIr[:-1] - dIl[1:]) / 8.0
    rate_half = h * (_HALF_Y0 * (d + nb * I[:-1]) + _HALF_Y1 * (d + nb * I[1:])) \
        + h * h * nb * (_HALF_M0 * dIr[:-1] + _HALF_M1 * dIl[1:])
    Lm = Lam[:-1] + rate_half

    def g(Sv, Iv):
        return (gamma + nb * (1.0 - Sv - Iv)) * Iv

    G0, Gm, G1 = g(S[:-1], I[:-1]), g(Sm, Im), g(S[1:], I[1:])

    # Simpson integral of g exp(Lambda - Lambda_right) over each segment
    seg = h / 6.0 * (G0 * np.exp(Lam[:-1] - Lam[1:]) + 4.0 * Gm * np.exp(Lm - Lam[1:]) + G1)
    starts = np.searchsorted(grid, grid - tau - 1e-9 * max(1.0, tau))
    aligned = np.abs(grid[np.minimum(starts, len(grid) - 1)] - (grid - tau)) <= 1e-9 * max(1.0, tau)
    n_nodes = len(grid)
    F = [math.nan] * n_nodes
    k = np.arange(starts[origin], origin)
    F[origin] = math.fsum(seg[k] * np.exp(Lam[k + 1] - Lam[origin]))
    seg_l, Lam_l, starts_l, aligned_l = seg.tolist(), Lam.tolist(), starts.tolist(), aligned.tolist()
    for j in range(origin + 1, n_nodes):
        if aligned_l[j] and aligned_l[j - 1] and not math.isnan(F[j - 1]):
            ref = Lam_l[j]
            expired = 0.0
            for k in range(starts_l[j - 1], starts_l[j]):
                expired += seg_l[k] * math.exp(Lam_l[k + 1] - ref)
            F[j] = F[j - 1] * math.exp(Lam_l[j - 1] - ref) + seg_l[j - 1] - expired
        else:
            F[j] = 1.0 - S[j] - I[j] - window_functional(params, dense, float(grid[j]))
    F = np.array(F)
    A = 1.0 - S[origin:] - I[origin:] - F[origin:]
    return A, Lam[origin:]


def _monitor_columns(params: ModelParams, traj: Trajectory, monitors: Monitors) -> dict:
    log: dict = {}
    if monitors.a_functional:
        A, Lam = _a_functional_series(params, traj)
        A_ref = A[0] * np.exp(-Lam)
        log["A"] = A
        log["A_ref"] = A_ref
        # A is R minus a window integral; once A is far below R its error is
        # measured against R, the size of the terms that cancel
        scale = np.maximum(np.abs(A_ref), np.maximum(1.0 - traj.S - traj.I, A_FLOOR))
        log["A_rel_error"] = np.abs(A - A_ref) / scale
    if monitors.invariants:
        dense = traj.dense
        origin = int(np.searchsorted(dense.grid, 0.0))
        beta = params.beta
        rate = beta * dense.values[:, 0] - params.gamma - params.d
        growth = _hermite_cumulative(dense.grid, rate, beta * dense.deriv_left[:, 0],
                                     beta * dense.deriv_right[:, 0], origin)[origin:]
        I_pred = traj.I[0] * np.exp(growth)
        log["I_identity"] = I_pred
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.abs(I_pred - traj.I) / np.abs(traj.I)
        log["I_rel_error"] = np.where(traj.I > 0, err, np.abs(I_pred - traj.I))
    return log


# smallest denominator in the A-functional error
A_FLOOR = 1e-8


def _attach_monitors(traj: Trajectory, monitors: Monitors) -> None:
    traj.monitor_log = _monitor_columns(traj.params, traj, monitors)
    if monitors.liminf and len(traj.times) > 2:
        traj.monitor_log["liminf"] = liminf_estimate(traj)


@dataclass
class InvariantReport:
    """Largest violations along a trajectory; ``None`` marks a check that does not apply."""

    negativity: float
    sum_excess: float | None
    a_functional_rel_error: float | None
    exp_identity_rel_error: float | None
    monotonicity: float | None
    a0: float | None
    liminf: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def monitor_invariants(params: ModelParams, traj: Trajectory, tol: float = 1e-8) -> InvariantReport:
    """Check positivity, ``S + I <= 1``, the A-functional decay law, the
    exponential identity for I and, when ``R0 <= 1``, monotone decay of I.

    A report made during :func:`simulate` (at full step resolution) is
    returned as is; otherwise columns missing from ``traj.monitor_log`` are
    computed on demand.
    """
    if "report" in traj.monitor_log:
        return traj.monitor_log["report"]
    log = dict(traj.monitor_log)
    if "A" not in log or "I_identity" not in log:
        log.update(_monitor_columns(params, traj, Monitors()))
    S, I = traj.S, traj.I
    negativity = float(max(0.0, -S.min(), -I.min()))
    a0 = float(log["A"][0])
    sum_excess = float(max(0.0, (S + I).max() - 1.0)) if a0 >= -tol else None
    monotone = float(max(0.0, np.diff(I).max(initial=0.0))) if r0(params) <= 1.0 else None
    liminf = log.get("liminf")
    return InvariantReport(
        negativity=negativity,
        sum_excess=sum_excess,
        a_functional_rel_error=float(np.max(log["A_rel_error"])),
        exp_identity_rel_error=float(np.max(log["I_rel_error"])),
        monotonicity=monotone,
        a0=a0,
        liminf=None if liminf is None else float(liminf),
    )
