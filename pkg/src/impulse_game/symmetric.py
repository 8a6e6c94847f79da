"""Closed-form equilibrium of the symmetric linear game f1 = x - s1, f2 = s2 - x.

Everything hinges on the unique zero xi in (0, eta) of

    F(x) = 2 x + theta c - eta log((eta + x) / (eta - x)).

For large c the root sits within a few ulps of eta, so the closed forms are
evaluated through ``L = log((eta + xi) / (eta - xi))`` which stays well
conditioned: ``xi = eta tanh(L/2)`` and ``eta^2 - xi^2 = eta^2 / cosh(L/2)^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import EquilibriumParams, GameSpec, SpecError, linear_constants


class RootError(ArithmeticError):
    pass


def F(x, c: float, theta: float, eta: float):
    return 2.0 * x + theta * c - 2.0 * eta * np.arctanh(np.asarray(x) / eta)


def F_prime(x, eta: float):
    return 2.0 - 2.0 * eta**2 / (eta**2 - np.asarray(x) ** 2)


def solve_xi(c: float, theta: float, eta: float, tol: float = 1e-12, max_shrink: int = 200) -> float:
    """Zero of F in (0, eta) by bisection down to width 1e-3*eta, then safeguarded Newton."""
    if not (c > 0 and theta > 0 and eta > 0 and tol > 0):
        raise ValueError("solve_xi needs c, theta, eta, tol > 0")
    lo, hi = 1e-12 * eta, (1.0 - 1e-12) * eta
    # F(0+) = theta c > 0 always; push hi toward eta until F(hi) < 0.
    for _ in range(max_shrink):
        fhi = F(hi, c, theta, eta)
        if np.isfinite(fhi) and fhi < 0:
            break
        nxt = eta - 0.5 * (eta - hi)
        if nxt == hi:
            nxt = np.nextafter(hi, eta)
        if nxt >= eta:
            raise RootError(f"root of F is not resolvable below eta={eta} in double precision (c={c})")
        hi = nxt
    else:
        raise RootError("bracket shrink exhausted")
    if F(lo, c, theta, eta) <= 0:
        return lo

    while hi - lo > 1e-3 * eta:
        mid = 0.5 * (lo + hi)
        if F(mid, c, theta, eta) > 0:
            lo = mid
        else:
            hi = mid

    x = 0.5 * (lo + hi)
    for _ in range(100):
        fx = F(x, c, theta, eta)
        if abs(fx) <= tol:
            return float(x)
        if fx > 0:
            lo = x
        else:
            hi = x
        step = fx / F_prime(x, eta)
        nxt = x - step
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if nxt == x:
            break
        x = nxt
    return float(x)


def _sech(h: float) -> float:
    e = math.exp(-abs(h))
    return 2.0 * e / (1.0 + e * e)


def _G(L, c, theta, eta):
    # F expressed in L; G(L) = 0 <=> F(eta tanh(L/2)) = 0 and G' = eta tanh(L/2)^2 > 0.
    return eta * L - 2.0 * eta * math.tanh(0.5 * L) - theta * c


def solve_log_ratio(c: float, theta: float, eta: float, tol: float = 1e-14) -> float:
    """L = log((eta + xi)/(eta - xi)) for the root xi of F."""
    if not (c > 0 and theta > 0 and eta > 0):
        raise ValueError("solve_log_ratio needs c, theta, eta > 0")
    lo, hi = 0.0, theta * c / eta + 2.0
    while hi - lo > 1e-3 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if _G(mid, c, theta, eta) < 0:
            lo = mid
        else:
            hi = mid
    L = 0.5 * (lo + hi)
    for _ in range(100):
        g = _G(L, c, theta, eta)
        if g < 0:
            lo = L
        else:
            hi = L
        dg = eta * math.tanh(0.5 * L) ** 2
        nxt = L - g / dg if dg > 0 else 0.5 * (lo + hi)
        if not (lo <= nxt <= hi):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - L) <= tol * max(1.0, L):
            return nxt
        L = nxt
    return L


def xi_derivatives(xi: float, c: float, theta: float, eta: float) -> tuple[float, float]:
    """(xi'(c), xi''(c)) from implicit differentiation of F(xi(c), c) = 0."""
    if not 0 < xi < eta:
        raise ValueError("xi must lie in (0, eta)")
    gap = (eta - xi) * (eta + xi)
    d1 = 0.5 * theta * gap / xi**2
    d2 = -0.5 * theta**2 * eta**2 * gap / xi**5
    return d1, d2


@dataclass(frozen=True)
class DerivedCoefficients:
    s_tilde: float
    theta: float
    eta: float
    xi: float
    gamma_cap: float
    log_ratio: float
    root_residual: float

    @property
    def eta2_minus_xi2(self) -> float:
        return (self.eta * _sech(0.5 * self.log_ratio)) ** 2


def derived_coefficients(spec: GameSpec, c: float | None = None) -> DerivedCoefficients:
    s1, s2 = linear_constants(spec)
    c = spec.c if c is None else c
    if not c > 0:
        raise SpecError("c>0", "closed form needs a positive fixed cost")
    theta = spec.theta
    eta = (1.0 - spec.lam * spec.rho) / spec.rho
    L = solve_log_ratio(c, theta, eta)
    xi = eta * math.tanh(0.5 * L)
    dl = spec.lam - spec.lam_tilde
    gamma = theta * (c - spec.c_tilde) / (4 * xi) + theta * c * dl / (4 * eta * xi) + dl / (2 * eta)
    resid = _G(L, c, theta, eta)
    return DerivedCoefficients(0.5 * (s1 + s2), theta, eta, xi, gamma, L, resid)


def closed_form_equilibrium(spec: GameSpec, c: float | None = None):
    """Semi-explicit Nash 8-tuple for a symmetric-linear spec (optionally at another c)."""
    d = derived_coefficients(spec, c)
    if d.gamma_cap <= 0:
        raise SpecError("(c,lambda)=(c_tilde,lambda_tilde) forbidden", "Gamma = 0 gives no admissible equilibrium")
    th, s = d.theta, d.s_tilde
    q = math.asinh(math.sqrt(d.gamma_cap))  # log(sqrt(G+1) + sqrt(G))
    half = 0.5 * d.log_ratio
    xbar2 = s + (half + q) / th
    xbar1 = s - (half + q) / th
    xstar2 = s + (q - half) / th
    xstar1 = s - (q - half) / th
    root = d.eta * _sech(half) / (2 * th)
    g1, g0 = math.sqrt(d.gamma_cap + 1), math.sqrt(d.gamma_cap)

    def coeff(i, j):
        return math.exp((-1) ** j * th * s) * root * ((-1) ** (i + j + 1) * g1 - g0)

    p = EquilibriumParams(coeff(1, 1), coeff(1, 2), coeff(2, 1), coeff(2, 2), xbar1, xbar2, xstar1, xstar2)
    return p.check(), d


def reduced_variables(p: EquilibriumParams, d: DerivedCoefficients) -> tuple[float, float, float, float]:
    """(ybar, ystar, A1, A2) after the exponential change of variables for player 2."""
    th, s = d.theta, d.s_tilde
    return (
        math.exp(th * (p.xbar2 - s)),
        math.exp(th * (p.xstar2 - s)),
        2 * th * p.a21 * math.exp(th * s),
        2 * th * p.a22 * math.exp(-th * s),
    )


def reduced_residual(spec: GameSpec, p: EquilibriumParams, d: DerivedCoefficients, c: float | None = None) -> np.ndarray:
    """Residuals of the four reduced equations in (ybar, ystar, A1, A2)."""
    c = spec.c if c is None else c
    yb, ys, A1, A2 = reduced_variables(p, d)
    eta, th = d.eta, d.theta
    log_r = math.log(yb / ys)
    return np.array(
        [
            A1 * ys**2 - 2 * eta * ys - A2,
            A1 * yb**2 - 2 * eta * yb - A2,
            (A1 + A2) ** 2 * (yb - ys) + 2 * A2 * (th * (c - spec.c_tilde) + (spec.lam - spec.lam_tilde) * log_r),
            A1 * (yb - ys) + th * c - eta * log_r,
        ]
    )


def reduced_solution(spec: GameSpec, d: DerivedCoefficients, c: float | None = None) -> tuple[float, float, float, float]:
    """(ybar, ystar, A1, A2) built directly from xi via the M, N quadratic."""
    c = spec.c if c is None else c
    eta, xi, th = d.eta, d.xi, d.theta
    M = d.eta2_minus_xi2
    N = math.sqrt(M * (th * eta * (c - spec.c_tilde) + (spec.lam - spec.lam_tilde) * (2 * xi + th * c)) / (4 * eta * xi))
    A1 = -N + math.sqrt(N**2 + M)
    A2 = -N - math.sqrt(N**2 + M)
    disc = math.sqrt(eta**2 + A1 * A2)
    return (eta + disc) / A1, (eta - disc) / A1, A1, A2


@dataclass(frozen=True)
class LinearLimit:
    """x -> intercept + slope * x."""

    intercept: float
    slope: float

    def __call__(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class AsymptoticLimits:
    s_tilde: float
    # c -> 0+ (needs c_tilde = 0 and lambda = lambda_tilde)
    small_cost_applicable: bool
    small_cost_points: float | None
    small_cost_v1: LinearLimit | None
    small_cost_v2: LinearLimit | None
    # c -> +inf
    large_cost_xbar1: float
    large_cost_xbar2: float
    large_cost_xstar1: float
    large_cost_xstar2: float
    large_cost_v1: LinearLimit
    large_cost_v2: LinearLimit
    # c -> c_tilde+ (needs lambda = lambda_tilde)
    gain_limit_applicable: bool
    gain_limit_xbar1: float | None
    gain_limit_xbar2: float | None


def asymptotic_limits(spec: GameSpec) -> AsymptoticLimits:
    s1, s2 = linear_constants(spec)
    s = 0.5 * (s1 + s2)
    rho, lam = spec.rho, spec.lam
    theta = spec.theta
    eta = (1.0 - lam * rho) / rho
    equal_slopes = spec.lam == spec.lam_tilde

    small = spec.c_tilde == 0 and equal_slopes
    v2_small = LinearLimit((s2 - s) / rho + lam * s, -lam) if small else None
    # V1(x) = V2(2 s - x)
    v1_small = LinearLimit((s2 - s) / rho - lam * s, lam) if small else None

    if equal_slopes:
        if spec.c_tilde > 0:
            half = 0.5 * solve_log_ratio(spec.c_tilde, theta, eta) / theta
        else:
            half = 0.0
        g1, g2 = s - half, s + half
    else:
        g1 = g2 = None

    return AsymptoticLimits(
        s_tilde=s,
        small_cost_applicable=small,
        small_cost_points=s if small else None,
        small_cost_v1=v1_small,
        small_cost_v2=v2_small,
        large_cost_xbar1=-math.inf,
        large_cost_xbar2=math.inf,
        large_cost_xstar1=math.inf,
        large_cost_xstar2=-math.inf,
        large_cost_v1=LinearLimit(-s1 / rho, 1.0 / rho),
        large_cost_v2=LinearLimit(s2 / rho, -1.0 / rho),
        gain_limit_applicable=equal_slopes,
        gain_limit_xbar1=g1,
        gain_limit_xbar2=g2,
    )
