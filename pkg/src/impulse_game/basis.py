"""Solutions of the continuation-region ODE (sigma^2/2) phi'' - rho phi + f = 0.

Every solution is ``a_plus * exp(theta x) + a_minus * exp(-theta x) + p(x)`` with
``theta = sqrt(2 rho / sigma^2)`` and ``p`` the unique polynomial particular
solution. Polynomials are dense coefficient tuples in ascending degree.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import math

import numpy as np
from numpy.polynomial import polynomial as npoly

MAX_DEGREE = 5


class DegreeError(ValueError):
    pass


def trim(coeffs) -> tuple[float, ...]:
    """Drop trailing zero coefficients (keeps at least one entry)."""
    c = [float(v) for v in coeffs]
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    return tuple(c) if c else (0.0,)


def degree(coeffs) -> int:
    return len(trim(coeffs)) - 1


def particular_solution(f, rho: float, sigma: float) -> tuple[float, ...]:
    """Polynomial ``p`` with ``(sigma^2/2) p'' - rho p + f = 0``.

    The map ``p -> rho p - (sigma^2/2) p''`` is upper triangular on the monomial
    basis, so coefficients are found from the top degree down. The recurrence is
    run in exact rational arithmetic on the binary values of the inputs and only
    rounded at the end.
    """
    f = trim(f)
    if len(f) - 1 > MAX_DEGREE:
        raise DegreeError(f"payoff degree {len(f) - 1} exceeds the cap of {MAX_DEGREE}")
    if not (rho > 0 and sigma > 0):
        raise ValueError("rho and sigma must be positive")
    r = Fraction(rho)
    half_var = Fraction(sigma) ** 2 / 2
    fq = [Fraction(v) for v in f]
    n = len(fq)
    p = [Fraction(0)] * n
    for k in range(n - 1, -1, -1):
        acc = fq[k]
        if k + 2 < n:
            acc += half_var * (k + 2) * (k + 1) * p[k + 2]
        p[k] = acc / r
    out = tuple(float(v) for v in p)

    resid = ode_polynomial_residual(out, f, rho, sigma)
    # rounding in the residual is relative to the largest term that cancels
    scale = max(1.0, max(abs(v) for v in f), rho * max(abs(v) for v in out))
    if np.max(np.abs(resid)) > 1e-12 * scale:
        raise ArithmeticError(f"particular solution residual too large: {resid}")
    return out


def ode_polynomial_residual(p, f, rho: float, sigma: float) -> np.ndarray:
    """Coefficients of (sigma^2/2) p'' - rho p + f."""
    p = np.asarray(p, dtype=float)
    f = np.asarray(f, dtype=float)
    n = max(len(p), len(f))
    out = np.zeros(n)
    out[: len(f)] += f
    out[: len(p)] -= rho * p
    if len(p) > 2:
        out[: len(p) - 2] += 0.5 * sigma**2 * npoly.polyder(p, 2)
    return out


@dataclass(frozen=True)
class PhiBasis:
    theta: float
    particular: tuple[float, ...]
    a_plus: float = 0.0
    a_minus: float = 0.0

    def with_coefficients(self, a_plus: float, a_minus: float) -> "PhiBasis":
        return PhiBasis(self.theta, self.particular, float(a_plus), float(a_minus))

    def __call__(self, x, deriv: int = 0):
        return eval_phi(self, x, deriv)


def make_basis(f, rho: float, sigma: float, a_plus: float = 0.0, a_minus: float = 0.0) -> PhiBasis:
    theta = float(np.sqrt(2.0 * rho / sigma**2))
    return PhiBasis(theta, particular_solution(f, rho, sigma), float(a_plus), float(a_minus))


def _scaled_exp(a: float, z):
    """a * exp(z), going through log|a| when exp(z) alone would overflow."""
    if a == 0.0:
        return np.zeros_like(z)
    with np.errstate(over="ignore"):
        direct = a * np.exp(z)
    big = np.abs(z) > 700.0
    if not np.any(big):
        return direct
    return np.where(big, math.copysign(1.0, a) * np.exp(math.log(abs(a)) + z), direct)


def eval_phi(basis: PhiBasis, x, deriv: int = 0):
    """Value (deriv=0) or first/second derivative of phi at ``x``."""
    if deriv not in (0, 1, 2):
        raise ValueError("deriv must be 0, 1 or 2")
    th = basis.theta
    x = np.asarray(x, dtype=float)
    p = np.asarray(basis.particular)
    if deriv:
        p = npoly.polyder(p, deriv) if len(p) > deriv else np.zeros(1)
    sign = (-1.0) ** deriv
    out = (
        _scaled_exp(basis.a_plus * th**deriv, th * x)
        + _scaled_exp(sign * basis.a_minus * th**deriv, -th * x)
        + npoly.polyval(x, p)
    )
    return float(out) if out.ndim == 0 else out


def ode_residual(basis: PhiBasis, f, rho: float, sigma: float, x):
    """Pointwise (sigma^2/2) phi'' - rho phi + f at ``x``."""
    return 0.5 * sigma**2 * eval_phi(basis, x, 2) - rho * eval_phi(basis, x, 0) + npoly.polyval(
        np.asarray(x, dtype=float), np.asarray(f, dtype=float)
    )
