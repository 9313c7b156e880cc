"""Model parameters, delay right-hand side and the invariant-region functional.

The state is two-dimensional, ``(S, I)``; the recovered fraction is implied
by ``R = 1 - S - I`` for a normalized population.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

PARAM_KEYS = ("beta", "gamma", "d", "nu", "tau")
MIN_QUADRATURE_INTERVALS = 256


class ParameterError(ValueError):
    """Raised for invalid model parameters or malformed parameter records.

    ``key`` names the offending field when there is one.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class SpanError(ValueError):
    """Raised when a history is evaluated outside the interval it covers."""


@dataclass(frozen=True)
class ModelParams:
    """One model instance.

    Parameters
    ----------
    beta : transmission rate (1/year), > 0
    gamma : recovery rate (1/year), > 0
    d : birth/death rate (1/year), >= 0
    nu : boosting force, >= 0
    tau : duration of immunity (years), >= 0
    """

    beta: float
    gamma: float
    d: float
    nu: float
    tau: float

    def __post_init__(self):
        for key in PARAM_KEYS:
            value = getattr(self, key)
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ParameterError(f"{key} must be a number, got {value!r}", key) from None
            if not math.isfinite(value):
                raise ParameterError(f"{key} must be finite, got {value}", key)
            object.__setattr__(self, key, value)
        if self.beta <= 0:
            raise ParameterError("beta must be > 0", "beta")
        if self.gamma <= 0:
            raise ParameterError("gamma must be > 0", "gamma")
        for key in ("d", "nu", "tau"):
            if getattr(self, key) < 0:
                raise ParameterError(f"{key} must be >= 0", key)

    @classmethod
    def from_r0(cls, r0: float, gamma: float, d: float, nu: float, tau: float) -> "ModelParams":
        """Build parameters with beta derived from the reproduction number."""
        return cls(beta=float(r0) * (float(gamma) + float(d)), gamma=gamma, d=d, nu=nu, tau=tau)

    @classmethod
    def from_dict(cls, record: Mapping) -> "ModelParams":
        """Parse a flat record with keys beta|r0, gamma, d, nu, tau.

        Exactly one of ``beta`` and ``r0`` must be present.
        """
        if not isinstance(record, Mapping):
            raise ParameterError("parameter record must be a JSON object")
        allowed = set(PARAM_KEYS) | {"r0"}
        for key in record:
            if key not in allowed:
                raise ParameterError(f"unknown parameter key {key!r}", key)
        has_beta, has_r0 = "beta" in record, "r0" in record
        if has_beta == has_r0:
            raise ParameterError("exactly one of 'beta' and 'r0' must be given", "beta" if has_beta else "r0")
        for key in ("gamma", "d", "nu", "tau"):
            if key not in record:
                raise ParameterError(f"missing parameter {key!r}", key)
        values = {}
        for key in record:
            v = record[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ParameterError(f"{key} must be a number, got {v!r}", key)
            values[key] = float(v)
        if has_r0:
            if values["r0"] <= 0 or not math.isfinite(values["r0"]):
                raise ParameterError("r0 must be a finite positive number", "r0")
            return cls.from_r0(values["r0"], values["gamma"], values["d"], values["nu"], values["tau"])
        return cls(**{k: values[k] for k in PARAM_KEYS})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_KEYS}

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    @property
    def r0(self) -> float:
        return r0(self)


@dataclass(frozen=True)
class StatePoint:
    S: float
    I: float

    @property
    def R(self) -> float:
        return 1.0 - self.S - self.I


def r0(params: ModelParams) -> float:
    """Basic reproduction number ``beta / (d + gamma)``."""
    return params.beta / (params.d + params.gamma)


def rhs(params: ModelParams, current: StatePoint, delayed: StatePoint,
        distributed_integral: float) -> tuple[float, float]:
    """Derivatives ``(dS, dI)`` of the delay system.

    ``distributed_integral`` is the integral of I over the trailing window
    ``[t - tau, t]``; the caller computes it from the solution history.
    """
    if distributed_integral < 0:
        raise ValueError(f"distributed integral must be >= 0, got {distributed_integral}")
    beta, gamma, d, nu, tau = params.beta, params.gamma, params.d, params.nu, params.tau
    S, I = current.S, current.I
    Sd, Id = delayed.S, delayed.I
    survival = math.exp(-d * tau - nu * beta * distributed_integral)
    dS = d * (1.0 - S) - beta * I * S + Id * (gamma + nu * beta * (1.0 - Sd - Id)) * survival
    dI = beta * I * S - (gamma + d) * I
    return dS, dI


class HistoryFunction:
    """Piecewise cubic Hermite function ``t -> (S(t), I(t))``.

    Each node carries a left and a right derivative so that a derivative
    jump (e.g. where an initial history meets the solution at t=0) is
    represented exactly. Segment ``[t_k, t_k+1]`` uses the right derivative
    at ``t_k`` and the left derivative at ``t_k+1``.
    """

    def __init__(self, grid, values, deriv_left=None, deriv_right=None):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float).reshape(len(grid), 2)
        if grid.ndim != 1 or len(grid) == 0:
            raise ValueError("grid must be a non-empty 1-d array")
        if len(grid) > 1 and np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if deriv_left is None:
            deriv_left = np.zeros_like(values)
        if deriv_right is None:
            deriv_right = deriv_left
        self.grid = grid
        self.values = values
        self.deriv_left = np.asarray(deriv_left, dtype=float).reshape(values.shape)
        self.deriv_right = np.asarray(deriv_right, dtype=float).reshape(values.shape)
        for arr in (self.grid, self.values, self.deriv_left, self.deriv_right):
            arr.setflags(write=False)

    @classmethod
    def constant(cls, S: float, I: float, tau: float) -> "HistoryFunction":
        grid = [-tau, 0.0] if tau > 0 else [0.0]
        return cls(grid, [[S, I]] * len(grid))

    @classmethod
    def linear(cls, start, end, tau: float) -> "HistoryFunction":
        """Linear interpolation from ``start=(S, I)`` at -tau to ``end`` at 0."""
        if tau <= 0:
            return cls([0.0], [end])
        start, end = np.asarray(start, float), np.asarray(end, float)
        slope = (end - start) / tau
        return cls([-tau, 0.0], [start, end], [slope, slope])

    @classmethod
    def tabulated(cls, times, S, I) -> "HistoryFunction":
        """Shape-preserving (PCHIP) interpolation of tabulated values."""
        from scipy.interpolate import PchipInterpolator

        times = np.asarray(times, dtype=float)
        values = np.column_stack([np.asarray(S, float), np.asarray(I, float)])
        if len(times) == 1:
            return cls(times, values)
        slopes = PchipInterpolator(times, values, axis=0).derivative()(times)
        return cls(times, values, slopes)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.span
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            raise SpanError(f"evaluation outside history span [{lo}, {hi}]")
        t = np.clip(t, lo, hi)
        if len(self.grid) == 1:
            return t, np.zeros(t.shape, dtype=int)
        k = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, len(self.grid) - 2)
        return t, k

    def __call__(self, t):
        """Evaluate ``(S, I)``; returns shape ``t.shape + (2,)``."""
        t, k = self._locate(t)
        if len(self.grid) == 1:
            return np.broadcast_to(self.values[0], t.shape + (2,)).copy()
        t0, t1 = self.grid[k], self.grid[k + 1]
        h = (t1 - t0)[..., None]
        s = ((t - t0) / (t1 - t0))[..., None]
        y0, y1 = self.values[k], self.values[k + 1]
        m0, m1 = self.deriv_right[k], self.deriv_left[k + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1

    def derivative(self, t):
        t, k = self._locate(t)
        if len(self.grid) == 1:
            return np.zeros(t.shape + (2,))
        t0, t1 = self.grid[k], self.grid[k + 1]
        h = (t1 - t0)[..., None]
        s = ((t - t0) / (t1 - t0))[..., None]
        y0, y1 = self.values[k], self.values[k + 1]
        m0, m1 = self.deriv_right[k], self.deriv_left[k + 1]
        dh00 = 6 * s * (s - 1)
        dh10 = (1 - s) * (1 - 3 * s)
        dh01 = -dh00
        dh11 = s * (3 * s - 2)
        return (dh00 * y0 + dh01 * y1) / h + dh10 * m0 + dh11 * m1

    def resample(self, grid) -> "HistoryFunction":
        """Return the same function represented on a finer node set."""
        grid = np.asarray(grid, dtype=float)
        values = self(grid)
        deriv = self.derivative(grid)
        # keep jumps at original nodes that survive in the new grid
        left, right = deriv.copy(), deriv.copy()
        idx = np.searchsorted(self.grid, grid)
        for j, (t, i) in enumerate(zip(grid, idx)):
            if i < len(self.grid) and self.grid[i] == t:
                left[j] = self.deriv_left[i]
                right[j] = self.deriv_right[i]
        return HistoryFunction(grid, values, left, right)

    def check_state_bounds(self, tol: float = 1e-8) -> float:
        """Largest violation of ``S, I >= 0`` and ``S + I <= 1`` at the nodes."""
        S, I = self.values[:, 0], self.values[:, 1]
        return float(max(0.0, -S.min(), -I.min(), (S + I).max() - 1.0))


def _refined(history: HistoryFunction, lo: float, hi: float):
    """Nodes of ``history`` inside ``[lo, hi]`` plus segment midpoints.

    Returns the coarse nodes, the refined (node, midpoint, node, ...) points,
    refined values and refined derivatives.
    """
    inner = history.grid[(history.grid > lo) & (history.grid < hi)]
    # coarse histories (e.g. constant or linear) still get a fine quadrature grid
    coarse = np.concatenate([[lo], inner, [hi]])
    uniform = np.linspace(lo, hi, MIN_QUADRATURE_INTERVALS + 1)
    pos = np.clip(np.searchsorted(coarse, uniform), 1, len(coarse) - 1)
    gap = np.minimum(np.abs(uniform - coarse[pos - 1]), np.abs(uniform - coarse[pos]))
    nodes = np.union1d(coarse, uniform[gap > 1e-9 * max(1.0, hi - lo)])
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    pts = np.empty(2 * len(nodes) - 1)
    pts[0::2] = nodes
    pts[1::2] = mids
    vals = history(pts)
    der = history.derivative(pts)
    return nodes, pts, vals, der


def _segment_integrals(pts, f, df_left, df_right):
    """Exact integrals of the cubic Hermite interpolant over consecutive points."""
    h = np.diff(pts)
    return 0.5 * h * (f[:-1] + f[1:]) + h * h * (df_right[:-1] - df_left[1:]) / 12.0


def window_functional(params: ModelParams, history: HistoryFunction, t: float) -> float:
    """``A(t)`` computed from a history covering ``[t - tau, t]``.

    The outer integral uses composite Simpson on the history nodes (with
    Hermite midpoints); the inner exponent is accumulated on the same
    refined points from the exact integrals of the cubic interpolant.
    """
    beta, gamma, d, nu, tau = params.beta, params.gamma, params.d, params.nu, params.tau
    lo, hi = history.span
    slack = 1e-9 * max(1.0, abs(t), tau)
    if t - tau < lo - slack or t > hi + slack:
        raise SpanError(f"history [{lo}, {hi}] does not cover [{t - tau}, {t}]")
    S_t, I_t = history(np.clip(t, lo, hi))
    if tau == 0:
        return float(1.0 - S_t - I_t)
    nodes, pts, vals, der = _refined(history, max(t - tau, lo), min(t, hi))
    S, I = vals[:, 0], vals[:, 1]
    dI = der[:, 1]
    dl, dr = dI.copy(), dI.copy()
    # one-sided slopes at coarse nodes where the history has a derivative jump
    for j in range(0, len(pts), 2):
        match = np.nonzero(history.grid == pts[j])[0]
        if match.size:
            dl[j] = history.deriv_left[match[0], 1]
            dr[j] = history.deriv_right[match[0], 1]
    rate = d + nu * beta * I
    seg = _segment_integrals(pts, rate, nu * beta * dl, nu * beta * dr)
    # inner[k] = integral of (d + nu beta I) from pts[k] to t
    inner = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    g = (gamma + nu * beta * (1.0 - S - I)) * I * np.exp(-inner)
    h = np.diff(nodes)
    outer = np.sum(h / 6.0 * (g[0:-1:2] + 4.0 * g[1::2] + g[2::2]))
    return float(1.0 - S_t - I_t - outer)


def omega_tilde_membership(params: ModelParams, history: HistoryFunction) -> float:
    """``A(0)`` for an initial history; the history lies in the invariant set iff it is >= 0."""
    lo, hi = history.span
    if hi != 0.0 or lo > -params.tau:
        raise SpanError(f"initial history must span [-tau, 0] = [{-params.tau}, 0], got [{lo}, {hi}]")
    return window_functional(params, history, 0.0)


def a_functional(params: ModelParams, trajectory, t: float) -> float:
    """``A(t)`` along a simulated solution (a ``Trajectory`` or a ``HistoryFunction``)."""
    dense = getattr(trajectory, "dense", trajectory)
    return window_functional(params, dense, t)


def warn_if_outside_omega_tilde(params: ModelParams, history: HistoryFunction, tol: float = 1e-8) -> float:
    value = omega_tilde_membership(params, history)
    if value < -tol:
        warnings.warn(
            f"initial history is outside the positively invariant set (A(0) = {value:.3e}); "
            "S + I <= 1 is not guaranteed",
            RuntimeWarning,
            stacklevel=3,
        )
    return value
