"""Characteristic roots of the linearization at the endemic equilibrium.

The characteristic relation, multiplied through by lambda, reads

    W(lambda) = P(lambda) + Q(lambda) exp(-lambda tau) = 0

with a cubic ``P`` and a quadratic ``Q``. ``W(0) = 0`` always, but that root
is an artifact of the multiplication and never a true eigenvalue.

Roots are located by pseudospectral collocation of the infinitesimal
generator of the linear delay system on ``[-tau, 0]`` and then polished by
Newton's method on ``W``. The collocation matrix is assembled from the
linearized equations directly, not from ``P`` and ``Q``, so the two stages
check each other.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .equilibria import Equilibrium, Kind, endemic_equilibrium
from .model import ModelParams, r0

DEFAULT_COLLOCATION = 64
DEFAULT_CUTOFF = -0.5
MARGIN = 1e-7
NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-12
RESIDUAL_TOL = 1e-8
MAX_COLLOCATION = 768
# the rightmost root must sit in the lower part of the trusted band |Im| tau <= n
RESOLVED_FRACTION = 0.5


class SpectrumError(RuntimeError):
    def __init__(self, message: str, **payload):
        super().__init__(message)
        self.payload = payload


class StabilityClass(str, enum.Enum):
    DFE_GLOBALLY_STABLE = "DFEGloballyStable"
    ENDEMIC_STABLE = "EndemicStable"
    ENDEMIC_UNSTABLE = "EndemicUnstable"
    MARGINAL = "Marginal"
    ERROR = "Error"


def _mu(params: ModelParams, I: float) -> float:
    return params.beta * I * math.exp(-params.tau * (params.d + params.nu * params.beta * I))


def _sigma(params: ModelParams, I: float) -> float:
    return params.gamma + params.nu * params.beta * (1.0 - 1.0 / r0(params) - I)


@dataclass(frozen=True)
class QuasiPolynomial:
    """``W(lambda) = P(lambda) + Q(lambda) exp(-lambda tau)``.

    ``p_coeffs`` = (1, p2, p1, p0) and ``q_coeffs`` = (q2, q1, q0), highest
    degree first.
    """

    p_coeffs: tuple[float, float, float, float]
    q_coeffs: tuple[float, float, float]
    tau: float
    mu: float
    sigma: float

    def P(self, lam):
        a3, a2, a1, a0 = self.p_coeffs
        return ((a3 * lam + a2) * lam + a1) * lam + a0

    def Q(self, lam):
        b2, b1, b0 = self.q_coeffs
        return (b2 * lam + b1) * lam + b0

    def dP(self, lam):
        a3, a2, a1, _ = self.p_coeffs
        return (3 * a3 * lam + 2 * a2) * lam + a1

    def dQ(self, lam):
        b2, b1, _ = self.q_coeffs
        return 2 * b2 * lam + b1

    def W(self, lam):
        return self.P(lam) + self.Q(lam) * np.exp(-lam * self.tau)

    def dW(self, lam):
        return self.dP(lam) + (self.dQ(lam) - self.tau * self.Q(lam)) * np.exp(-lam * self.tau)

    @property
    def scale(self) -> float:
        return max(1.0, max(abs(c) for c in self.p_coeffs))


def char_coeffs(params: ModelParams, eq: Equilibrium) -> QuasiPolynomial:
    """Quasi-polynomial of the linearization at the endemic equilibrium."""
    if eq.kind is not Kind.ENDEMIC:
        raise ValueError("char_coeffs requires the endemic equilibrium")
    beta, gamma, d, nu = params.beta, params.gamma, params.d, params.nu
    I = eq.I_star
    mu = _mu(params, I)
    sigma = _sigma(params, I)
    k0 = nu * beta * I * mu * sigma
    p = (1.0, d + beta * I, beta * (gamma + d) * I, k0)
    q = (nu * mu, -(sigma - nu * beta * I) * mu, -k0)
    return QuasiPolynomial(p, q, params.tau, mu, sigma)


def zero_root_margin(params: ModelParams, eq: Equilibrium) -> float:
    """``F(tau)``; positivity guarantees lambda = 0 is not a characteristic root."""
    beta, gamma, d, nu, tau = params.beta, params.gamma, params.d, params.nu, params.tau
    I = eq.I_star
    k = nu * beta * I
    return (gamma + d) * math.exp(tau * (d + k)) + (gamma + nu * beta * (1 - 1 / r0(params) - I)) * (k * tau - 1) + k


def dfe_char_roots(params: ModelParams) -> tuple[complex, complex]:
    """Roots ``(-d, beta (1 - 1/R0))`` of the characteristic equation at the DFE."""
    return complex(-params.d), complex(params.beta * (1.0 - 1.0 / r0(params)))


def jacobian_tau0(params: ModelParams, S: float, I: float) -> np.ndarray:
    beta, gamma, d, nu = params.beta, params.gamma, params.d, params.nu
    return np.array([
        [-d - beta * I * (1 + nu), gamma - beta * S + nu * beta * (1 - S - 2 * I)],
        [beta * I, beta * S - gamma - d],
    ])


def crossing_frequencies(params: ModelParams, eq: Equilibrium) -> list[float]:
    """Positive ``omega`` with ``|P(i omega)| = |Q(i omega)|``.

    ``xi = omega**2`` solves ``xi**2 + a2 xi + a1 = 0``; candidate imaginary
    roots of ``W`` can only sit at these frequencies.
    """
    if eq.kind is not Kind.ENDEMIC:
        raise ValueError("crossing_frequencies requires the endemic equilibrium")
    beta, gamma, d, nu = params.beta, params.gamma, params.d, params.nu
    I = eq.I_star
    mu, sigma = _mu(params, I), _sigma(params, I)
    bI = beta * I
    a2 = d * d + bI * bI - 2 * beta * gamma * I - nu * nu * mu * mu
    a1 = ((bI * (gamma + d)) ** 2 - 2 * nu * bI * (d + bI) * mu * sigma
          - (sigma - nu * bI) ** 2 * mu * mu - 2 * nu * nu * mu * mu * bI * sigma)
    disc = a2 * a2 - 4 * a1
    if disc < 0:
        return []
    root = math.sqrt(disc)
    # numerically stable pair of roots
    qv = -0.5 * (a2 + math.copysign(root, a2))
    xis = {qv, a1 / qv} if qv != 0 else {0.0}
    return sorted(math.sqrt(xi) for xi in xis if xi > 0)


def root_bound(params: ModelParams) -> float:
    """Upper bound on ``|lambda|`` for characteristic roots with positive real part."""
    beta, gamma, d, nu = params.beta, params.gamma, params.d, params.nu
    a = d + beta * (nu + 1)
    b = beta * (gamma + beta * (2 * nu + 1))
    c = 2 * nu * beta * beta * (gamma + nu * beta)
    return max(1.0, a + b + c)


# --- collocation of the linear delay system --------------------------------


def linearization(params: ModelParams, eq: Equilibrium):
    """Matrices of ``z' = A0 z(t) + A1 z(t - tau) + K * int_{t-tau}^t z``.

    Built from the linearized equations in ``(x, y) = (S - S*, I - I*)``.
    """
    beta, gamma, d, nu, tau = params.beta, params.gamma, params.d, params.nu, params.tau
    S, I = eq.S_star, eq.I_star
    decay = math.exp(-tau * (d + nu * beta * I))
    A0 = np.array([[-(d + beta * I), -beta * S],
                   [beta * I, beta * S - gamma - d]])
    A1 = np.array([[-nu * beta * I * decay, (gamma + nu * beta * (1 - S - 2 * I)) * decay],
                   [0.0, 0.0]])
    K = np.array([[0.0, -nu * beta * I * (gamma + nu * beta * (1 - S - I)) * decay],
                  [0.0, 0.0]])
    return A0, A1, K


def characteristic_determinant(params: ModelParams, eq: Equilibrium, lam: complex) -> complex:
    """``lambda * det(Delta(lambda))`` from the linearization matrices.

    Independent of the quasi-polynomial coefficients; equals ``W(lambda)``
    for lambda != 0.
    """
    A0, A1, K = linearization(params, eq)
    lam = complex(lam)
    e = cmath.exp(-lam * params.tau)
    # lambda * Delta(lambda), with the distributed term (1 - e^{-lambda tau}) / lambda
    M = lam * (lam * np.eye(2) - A0 - A1 * e) - K * (1.0 - e)
    return complex(M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]) / lam


def chebyshev_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev extremal points ``cos(pi k / n)`` and the differentiation matrix."""
    x = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    return x, D


def clenshaw_curtis_weights(n: int) -> np.ndarray:
    """Quadrature weights on [-1, 1] for the nodes of :func:`chebyshev_nodes`."""
    theta = np.pi * np.arange(n + 1) / n
    w = np.zeros(n + 1)
    v = np.ones(n - 1)
    inner = theta[1:-1]
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n * n - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
        v -= np.cos(n * inner) / (n * n - 1)
    else:
        w[0] = w[n] = 1.0 / (n * n)
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
    w[1:-1] = 2.0 * v / n
    return w


def generator_matrix(params: ModelParams, eq: Equilibrium, n: int) -> np.ndarray:
    """Collocation matrix approximating the infinitesimal generator.

    The unknowns are the values of the state at the ``n + 1`` Chebyshev
    nodes ``theta_k`` in ``[-tau, 0]`` (``theta_0 = 0``). The first block row
    imposes the delay equation at ``theta = 0``; the others differentiate
    the interpolating polynomial.
    """
    tau = params.tau
    A0, A1, K = linearization(params, eq)
    x, D = chebyshev_nodes(n)
    D = D * (2.0 / tau)
    w = clenshaw_curtis_weights(n) * (tau / 2.0)
    m = 2
    M = np.zeros((m * (n + 1), m * (n + 1)))
    M[:m, :m] += A0
    M[:m, m * n:] += A1
    M[:m, :] += np.kron(w[None, :], K)
    M[m:, :] = np.kron(D[1:, :], np.eye(m))
    return M


def collocation_eigenvalues(params: ModelParams, eq: Equilibrium, n: int) -> np.ndarray:
    return np.linalg.eigvals(generator_matrix(params, eq, n))


# --- refinement -------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumResult:
    roots: tuple[complex, ...]
    rightmost: complex
    residuals: tuple[float, ...]
    method_order: int
    estimates: tuple[complex, ...] = ()
    discarded: int = 0
    convergence_delta: float | None = None
    cutoff: float = DEFAULT_CUTOFF
    quasi: QuasiPolynomial | None = field(default=None, repr=False, compare=False)

    @property
    def unstable_pairs(self) -> int:
        return sum(1 for z in self.roots if z.real > MARGIN and z.imag >= 0)


def newton_refine(qp: QuasiPolynomial, lam0: complex, max_iter: int = NEWTON_MAX_ITER,
                  tol: float = NEWTON_TOL, deflate=()) -> tuple[complex, float, bool]:
    """Newton iteration on ``W``; returns ``(root, |W(root)|, converged)``.

    ``deflate`` lists roots already found: the iteration then runs on
    ``W(lambda) / prod(lambda - r)`` so that it cannot return to them.
    """
    (a3, a2, a1, a0), (b2, b1, b0), tau = qp.p_coeffs, qp.q_coeffs, qp.tau
    lam = complex(lam0)
    target = tol * qp.scale
    for _ in range(max_iter):
        try:
            e = cmath.exp(-lam * tau)
        except OverflowError:
            return lam, math.inf, False
        q = (b2 * lam + b1) * lam + b0
        w = ((a3 * lam + a2) * lam + a1) * lam + a0 + q * e
        dw = (3 * a3 * lam + 2 * a2) * lam + a1 + (2 * b2 * lam + b1 - tau * q) * e
        if abs(w) <= target:
            return lam, abs(w), True
        if dw == 0:
            break
        if deflate:
            denom = dw / w - sum(1.0 / (lam - r) for r in deflate)
            if denom == 0:
                break
            step = 1.0 / denom
        else:
            step = w / dw
        lam -= step
        if abs(step) <= 1e-15 * max(1.0, abs(lam)):
            break
    with np.errstate(over="ignore", invalid="ignore"):
        w = abs(complex(qp.W(lam)))
    if not math.isfinite(w):
        return lam, math.inf, False
    return lam, w, w <= RESIDUAL_TOL * qp.scale


def _conjugate_closed(roots: list[complex], tol: float) -> list[complex]:
    """Deduplicate, snap near-real roots to the real axis and mirror conjugates."""
    upper: list[complex] = []
    for z in roots:
        if abs(z.imag) <= tol * max(1.0, abs(z)):
            z = complex(z.real, 0.0)
        elif z.imag < 0:
            z = z.conjugate()
        if not any(abs(z - u) <= tol * max(1.0, abs(z)) for u in upper):
            upper.append(z)
    full = []
    for z in upper:
        full.append(z)
        if z.imag != 0:
            full.append(z.conjugate())
    full.sort(key=lambda z: (-z.real, -z.imag))
    return full


def _delay_free_roots(qp: QuasiPolynomial) -> list[complex]:
    coeffs = np.array(qp.p_coeffs) + np.concatenate([[0.0], qp.q_coeffs])
    return [complex(z) for z in np.roots(coeffs)]


def _refined_roots(params: ModelParams, eq: Equilibrium, qp: QuasiPolynomial, cutoff: float, n: int):
    bound = root_bound(params)
    zero_tol = 1e-10 * bound
    if params.tau == 0:
        estimates = _delay_free_roots(qp)
        found = [z for z in estimates if z.real >= cutoff and abs(z) >= zero_tol]
        return _conjugate_closed(found, 1e-8), estimates, 0
    estimates = [complex(z) for z in collocation_eigenvalues(params, eq, n)]
    trusted = [z for z in estimates if abs(z.imag) * params.tau <= n]
    discarded = len(estimates) - len(trusted)
    band = RESOLVED_FRACTION * n / params.tau
    starts = []
    for z in sorted(trusted, key=lambda z: -z.real):
        if z.real < cutoff or z.imag < -1e-9 * max(1.0, abs(z)):
            continue
        # estimates near the edge of the trusted band may be inaccurate and
        # are refined on a best-effort basis
        starts.append((z, abs(z.imag) <= band))
        radius = 0.05 * (1.0 + abs(z))
        if 0 < z.imag < radius:
            # possibly two real roots smeared into a complex pair
            starts.append((z.conjugate(), False))

    def is_known(z):
        return any(abs(z - f) <= 1e-8 * max(1.0, abs(z)) or abs(z - f.conjugate()) <= 1e-8 * max(1.0, abs(z))
                   for f in found)

    found: list[complex] = []
    failed = []
    for z0, required in starts:
        radius = 0.05 * (1.0 + abs(z0))
        # lambda = 0 always solves W; deflate it together with nearby known roots
        near = [0j]
        for f in found:
            pair = (f,) if abs(f.imag) <= 1e-8 * max(1.0, abs(f)) else (f, f.conjugate())
            near.extend(r for r in pair if abs(r - z0) < radius)
        z, res, ok = newton_refine(qp, z0, deflate=near)
        if ok and abs(z - z0) > radius and is_known(z):
            # drifted onto a root already found: deflate it and try again
            extra = [z] if abs(z.imag) <= 1e-8 * max(1.0, abs(z)) else [z, z.conjugate()]
            z, res, ok = newton_refine(qp, z0, deflate=near + extra)
        if not ok:
            if required:
                failed.append((z0, z, res))
            continue
        if abs(z) >= zero_tol and z.real >= cutoff:
            found.append(z)
    # estimates that do not refine are tolerated only when a true root lies to their right
    top = max((f.real for f in found), default=-math.inf)
    for z0, z, res in failed:
        if z0.real >= top:
            raise SpectrumError("Newton refinement failed for a collocation estimate",
                                estimate=z0, reached=z, residual=res)
    return _conjugate_closed(found, 1e-8), estimates, discarded


def rightmost_roots(params: ModelParams, eq: Equilibrium | None = None, cutoff: float = DEFAULT_CUTOFF,
                    n_collocation: int = DEFAULT_COLLOCATION, check_convergence: bool = True,
                    adaptive: bool = True) -> SpectrumResult:
    """Characteristic roots with real part at least ``cutoff``.

    Parameters
    ----------
    cutoff : float
        Negative threshold on the real part.
    n_collocation : int
        Polynomial degree of the collocation (>= 16).
    check_convergence : bool
        Repeat with ``1.5 * n_collocation`` and require the same number of
        roots with ``Re >= cutoff / 2`` inside the resolved band.
    adaptive : bool
        Double ``n_collocation`` (up to ``MAX_COLLOCATION``) while the
        rightmost root has ``|Im| tau`` above half the trusted band; the
        order actually used is reported as ``method_order``.

    Raises
    ------
    SpectrumError
        On Newton failure for a trusted estimate or when the root set
        changes under collocation refinement.
    """
    if eq is None:
        eq = endemic_equilibrium(params)
        if eq is None:
            raise ValueError("no endemic equilibrium for R0 <= 1")
    if eq.kind is not Kind.ENDEMIC:
        raise ValueError("rightmost_roots requires the endemic equilibrium")
    if not cutoff < 0:
        raise ValueError("cutoff must be negative")
    if n_collocation < 16:
        raise ValueError("n_collocation must be >= 16")
    if zero_root_margin(params, eq) <= 0:
        raise SpectrumError("zero-root margin F(tau) is not positive", value=zero_root_margin(params, eq))
    qp = char_coeffs(params, eq)
    requested = cutoff
    while True:
        cutoff = requested
        roots, estimates, discarded = _refined_roots(params, eq, qp, cutoff, n_collocation)
        if not roots:
            # everything lies left of the cutoff: widen it to reach the rightmost estimates
            trusted = [z for z in estimates if (params.tau == 0 or abs(z.imag) * params.tau <= n_collocation)
                       and abs(z) >= 1e-10 * root_bound(params)]
            if not trusted:
                raise SpectrumError("collocation produced no trusted eigenvalue estimate", n=n_collocation)
            top = max(z.real for z in trusted)
            cutoff = top - max(1.0, abs(top)) * 0.5
            roots, estimates, discarded = _refined_roots(params, eq, qp, cutoff, n_collocation)
        if not (adaptive and roots and params.tau > 0 and n_collocation < MAX_COLLOCATION):
            break
        # an unresolved high-frequency root chain may continue beyond the band
        if abs(roots[0].imag) * params.tau <= RESOLVED_FRACTION * n_collocation:
            break
        n_collocation = min(2 * n_collocation, MAX_COLLOCATION)
    residuals = tuple(float(abs(qp.W(z))) for z in roots)
    limit = RESIDUAL_TOL * qp.scale
    if max(residuals) >= limit:
        raise SpectrumError("root residual above tolerance", residual=max(residuals), limit=limit)
    delta = None
    if check_convergence and params.tau > 0:
        n_fine = (3 * n_collocation + 1) // 2
        fine, _, _ = _refined_roots(params, eq, qp, cutoff, n_fine)
        half = cutoff / 2
        band = RESOLVED_FRACTION * n_collocation / params.tau

        def resolved(zs):
            return [z for z in zs if z.real >= half and abs(z.imag) <= band]

        coarse_set, fine_set = resolved(roots), resolved(fine)
        if len(coarse_set) != len(fine_set):
            raise SpectrumError("root count changed under collocation refinement",
                                n=n_collocation, count=len(coarse_set), n_fine=n_fine, count_fine=len(fine_set))
        delta = abs(roots[0].real - fine[0].real) if fine else math.inf
    return SpectrumResult(tuple(roots), roots[0], residuals, n_collocation, tuple(estimates), discarded, delta,
                          cutoff, qp)


@dataclass(frozen=True)
class Classification:
    cls: StabilityClass
    rightmost_re: float
    rightmost: complex | None = None
    unstable_pairs: int = 0
    I_star: float = 0.0
    n_collocation: int = 0


def classify(params: ModelParams, margin: float = MARGIN, n_collocation: int = DEFAULT_COLLOCATION,
             retry_collocation: int | None = None, check_convergence: bool = True) -> Classification:
    """Stability class plus the rightmost root that decided it."""
    eq = endemic_equilibrium(params)
    if eq is None:
        lam = max(dfe_char_roots(params), key=lambda z: z.real)
        return Classification(StabilityClass.DFE_GLOBALLY_STABLE, lam.real, lam, 0, 0.0, 0)
    res = rightmost_roots(params, eq, n_collocation=n_collocation, check_convergence=check_convergence)
    re = res.rightmost.real
    if abs(re) <= margin and retry_collocation:
        res = rightmost_roots(params, eq, n_collocation=retry_collocation, check_convergence=check_convergence)
        re = res.rightmost.real
    if re < -margin:
        cls = StabilityClass.ENDEMIC_STABLE
    elif re > margin:
        cls = StabilityClass.ENDEMIC_UNSTABLE
    else:
        cls = StabilityClass.MARGINAL
    return Classification(cls, re, res.rightmost, res.unstable_pairs, eq.I_star, res.method_order)


def classify_stability(params: ModelParams, margin: float = MARGIN) -> StabilityClass:
    """Stability class of the relevant equilibrium."""
    return classify(params, margin).cls
