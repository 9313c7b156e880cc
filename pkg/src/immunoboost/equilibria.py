"""Steady states: the disease-free equilibrium and the endemic equilibrium.

For ``R0 > 1`` the endemic equilibrium has ``S* = 1/R0`` and ``I*`` is the
unique positive intersection of the line

    y1(x) = (gamma + d) x - d (1 - 1/R0)

with the hump-shaped curve

    y2(x) = alpha x (rho - kappa x) exp(-eta x),   0 <= x <= rho/kappa,

with kappa = nu beta, rho = gamma + kappa (1 - 1/R0), alpha = exp(-d tau)
and eta = kappa tau.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .model import ModelParams, r0

R0_THRESHOLD_TOL = 1e-12
BISECTION_MAX_ITER = 200
BISECTION_WIDTH_TOL = 1e-13
NEWTON_MAX_STEPS = 5
EPS = 2.220446049250313e-16


class EquilibriumError(RuntimeError):
    """Bracket failure, non-convergence or a degenerate parameter set."""

    def __init__(self, message: str, **payload):
        super().__init__(message)
        self.payload = payload


class Kind(str, enum.Enum):
    DFE = "DFE"
    ENDEMIC = "Endemic"


class Method(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    BISECTION = "bisection"


@dataclass(frozen=True)
class Equilibrium:
    kind: Kind
    S_star: float
    I_star: float
    residual: tuple[float, float]
    method: Method
    quadratic_residual: float | None = None
    iterations: int = 0

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "S_star": self.S_star,
            "I_star": self.I_star,
            "residual": list(self.residual),
            "method": self.method.value,
        }
        if self.quadratic_residual is not None:
            out["quadratic_residual"] = self.quadratic_residual
        return out


@dataclass(frozen=True)
class IntersectionCoefficients:
    kappa: float
    rho: float
    alpha: float
    eta: float


def intersection_coefficients(params: ModelParams) -> IntersectionCoefficients:
    kappa = params.nu * params.beta
    rho = params.gamma + kappa * (1.0 - 1.0 / r0(params))
    return IntersectionCoefficients(kappa, rho, math.exp(-params.d * params.tau), kappa * params.tau)


def line_y1(params: ModelParams, x: float) -> float:
    return (params.gamma + params.d) * x - params.d * (1.0 - 1.0 / r0(params))


def curve_y2(params: ModelParams, x: float) -> float:
    c = intersection_coefficients(params)
    return c.alpha * x * (c.rho - c.kappa * x) * math.exp(-c.eta * x)


def curve_y2_prime(params: ModelParams, x: float) -> float:
    c = intersection_coefficients(params)
    return c.alpha * (c.eta * c.kappa * x * x - x * (2 * c.kappa + c.eta * c.rho) + c.rho) * math.exp(-c.eta * x)


def curve_y2_argmax(params: ModelParams) -> float:
    """Interior maximum of y2 on ``[0, rho/kappa]`` (requires nu, tau > 0)."""
    c = intersection_coefficients(params)
    root = math.sqrt(c.eta ** 2 * c.rho ** 2 + 4 * c.kappa ** 2)
    return (c.eta * c.rho + 2 * c.kappa - root) / (2 * c.eta * c.kappa)


def intersection_gap(params: ModelParams, x: float) -> float:
    """``G(x) = y1(x) - y2(x)``; its positive root is ``I*``."""
    return line_y1(params, x) - curve_y2(params, x)


def equilibrium_residual(params: ModelParams, S: float, I: float) -> tuple[float, float]:
    """Both equilibrium conditions evaluated at ``(S, I)``."""
    beta, gamma, d, nu, tau = params.beta, params.gamma, params.d, params.nu, params.tau
    r1 = d * (1 - S) - beta * I * S + I * (gamma + nu * beta * (1 - S - I)) * math.exp(-tau * (d + nu * beta * I))
    r2 = beta * I * S - (gamma + d) * I
    return r1, r2


def dfe(params: ModelParams) -> Equilibrium:
    return Equilibrium(Kind.DFE, 1.0, 0.0, equilibrium_residual(params, 1.0, 0.0), Method.CLOSED_FORM)


def _above_threshold(params: ModelParams) -> bool:
    return r0(params) > 1.0 + R0_THRESHOLD_TOL


def tau0_equilibrium(params: ModelParams) -> Equilibrium | None:
    """Endemic equilibrium of the delay-free system, ``(1/R0, 1 - 1/R0)``.

    Also evaluates the quadratic that ``I*`` must satisfy and reports its
    residual; a residual above 1e-12 is an error.
    """
    if params.tau != 0:
        raise ValueError(f"tau0_equilibrium requires tau = 0, got tau = {params.tau}")
    if not _above_threshold(params):
        return None
    R0 = r0(params)
    S = 1.0 / R0
    I = 1.0 - S
    k = params.nu * params.beta
    quad = k * I * I - I * (k * (1 - S) - params.d) + params.d * (S - 1)
    scale = max(1.0, k, params.d)
    if abs(quad) > 1e-12 * scale:
        raise EquilibriumError("quadratic check failed for the delay-free equilibrium", residual=quad)
    return Equilibrium(Kind.ENDEMIC, S, I, equilibrium_residual(params, S, I), Method.CLOSED_FORM,
                       quadratic_residual=quad)


def _phi(z: float) -> float:
    """``(1 - exp(-z)) / z`` with the removable singularity at 0."""
    return 1.0 if z == 0 else -math.expm1(-z) / z


def _bisect(f, lo: float, hi: float, atol: float = 0.0):
    f_lo, f_hi = f(lo), f(hi)
    # a root at either end to within rounding
    if 0 <= f_lo <= atol and f_hi > 0:
        return lo, lo, lo, 0
    if f_lo < 0 and -atol <= f_hi <= 0:
        return hi, hi, hi, 0
    if not (f_lo < 0 < f_hi):
        raise EquilibriumError("root is not bracketed", bracket=(lo, hi), values=(f_lo, f_hi))
    for it in range(1, BISECTION_MAX_ITER + 1):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BISECTION_WIDTH_TOL:
            return 0.5 * (lo + hi), lo, hi, it
    raise EquilibriumError("bisection did not converge within the iteration cap",
                           bracket=(lo, hi), values=(f(lo), f(hi)))


def endemic_equilibrium(params: ModelParams) -> Equilibrium | None:
    """Endemic equilibrium, or ``None`` when ``R0 <= 1``.

    Raises
    ------
    EquilibriumError
        If bisection fails (the payload carries the bracket and G values) or
        if ``nu = d = 0`` with ``tau > 0``, where every ``I`` in
        ``(0, 1 - 1/R0)`` is an equilibrium.
    """
    if not _above_threshold(params):
        return None
    if params.tau == 0:
        return tau0_equilibrium(params)
    R0 = r0(params)
    S = 1.0 / R0
    gamma, d = params.gamma, params.d
    if params.nu == 0:
        if d == 0:
            raise EquilibriumError("nu = d = 0 with tau > 0: equilibrium is not isolated")
        # d (1 - S) / (gamma + d - gamma exp(-d tau)) with d cancelled
        I = (1 - S) / (1.0 + gamma * params.tau * _phi(d * params.tau))
        return Equilibrium(Kind.ENDEMIC, S, I, equilibrium_residual(params, S, I), Method.CLOSED_FORM)

    c = intersection_coefficients(params)
    a, tau, kappa = 1.0 - S, params.tau, c.kappa

    def scaled_gap(x):
        # G(x) / (d + kappa x): same sign as G, free of cancellation for small d or kappa
        ph = _phi(tau * (d + kappa * x))
        return gamma * tau * x * ph - (a - x) * (1.0 - kappa * tau * x * ph)

    # G(1 - 1/R0) = gamma x (1 - exp(-d tau - eta x)) > 0, a tighter right end than rho/kappa
    lo, hi = d / (d + gamma) * a, min(c.rho / c.kappa, a)
    x, lo, hi, iterations = _bisect(scaled_gap, lo, hi, atol=64 * EPS * (1.0 + gamma * tau) * a)
    if d == 0:
        return Equilibrium(Kind.ENDEMIC, S, x, equilibrium_residual(params, S, x), Method.BISECTION,
                           iterations=iterations)

    def g_prime(z):
        return (gamma + d) - curve_y2_prime(params, z)

    for _ in range(NEWTON_MAX_STEPS):
        slope = g_prime(x)
        if slope == 0:
            break
        x_new = x - intersection_gap(params, x) / slope
        if not (lo <= x_new <= hi):
            break
        done = abs(x_new - x) <= 1e-16 * max(1.0, abs(x))
        x = x_new
        if done:
            break
    return Equilibrium(Kind.ENDEMIC, S, x, equilibrium_residual(params, S, x), Method.BISECTION,
                       iterations=iterations)


def find_equilibrium(params: ModelParams) -> Equilibrium:
    """The endemic equilibrium when it exists, otherwise the DFE."""
    eq = endemic_equilibrium(params)
    return eq if eq is not None else dfe(params)
