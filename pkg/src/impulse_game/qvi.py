"""Smooth-pasting system for polynomial payoffs, and grid certification of the QVI.

The continuation region is assumed to be one interval (xbar1, xbar2); on it both
value functions solve the ODE, and the eight pasting conditions pin down the two
thresholds, the two targets and the four exponential coefficients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.optimize import minimize_scalar
from scipy.special import expit, logit
from scipy.stats import qmc

from .basis import ode_residual, particular_solution
from .model import (
    EquilibriumParams,
    GameSpec,
    OrderConditionError,
    SpecError,
    is_symmetric_linear,
    phi_bases,
    value_functions,
)
from .symmetric import closed_form_equilibrium


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class PastingResidual:
    r: np.ndarray

    LABELS = (
        "dphi1(xstar1)-lam",
        "dphi1(xbar1)-lam",
        "V1 C0 at xbar1",
        "V1 C0 at xbar2",
        "dphi2(xstar2)+lam",
        "dphi2(xbar2)+lam",
        "V2 C0 at xbar1",
        "V2 C0 at xbar2",
    )

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.r)))

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in zip(self.LABELS, self.r)}


def _pasting_equations(phi1, dphi1, phi2, dphi2, xb1, xb2, xs1, xs2, spec: GameSpec) -> np.ndarray:
    c, ct, lam, lt = spec.c, spec.c_tilde, spec.lam, spec.lam_tilde
    return np.array(
        [
            dphi1(xs1) - lam,
            dphi1(xb1) - lam,
            phi1(xb1) - phi1(xs1) + c + lam * (xs1 - xb1),
            phi1(xb2) - phi1(xs2) - ct - lt * (xb2 - xs2),
            dphi2(xs2) + lam,
            dphi2(xb2) + lam,
            phi2(xb1) - phi2(xs1) - ct - lt * (xs1 - xb1),
            phi2(xb2) - phi2(xs2) + c + lam * (xb2 - xs2),
        ]
    )


def system_residual(p: EquilibriumParams, spec: GameSpec) -> PastingResidual:
    p.check()
    b1, b2 = phi_bases(spec, p)
    r = _pasting_equations(
        b1, lambda x: b1(x, 1), b2, lambda x: b2(x, 1), p.xbar1, p.xbar2, p.xstar1, p.xstar2, spec
    )
    if not np.all(np.isfinite(r)):
        raise OrderConditionError("non-finite pasting residual")
    return PastingResidual(r)


# --- Newton solver -----------------------------------------------------------
#
# Unknowns z = (b1+, b1-, b2+, b2-, m, g, t1, t2) with
#   xbar1 = m - e^g, xbar2 = m + e^g, xstar_i = xbar1 + 2 e^g sigmoid(t_i)
#   phi_i(x) = b_i+ e^{theta (x - xbar2)} + b_i- e^{-theta (x - xbar1)} + p_i(x)
# so every z is ordered and the exponentials are O(1) on the interval.


class _System:
    def __init__(self, spec: GameSpec):
        self.spec = spec
        self.theta = spec.theta
        self.p = [np.asarray(particular_solution(f, spec.rho, spec.sigma)) for f in (spec.f1, spec.f2)]
        self.dp = [npoly.polyder(q) if len(q) > 1 else np.zeros(1) for q in self.p]

    @staticmethod
    def levels(z):
        w = float(np.exp(z[5]))
        xb1, xb2 = z[4] - w, z[4] + w
        return xb1, xb2, xb1 + 2 * w * expit(z[6]), xb1 + 2 * w * expit(z[7])

    def residual(self, z) -> np.ndarray:
        th = self.theta
        with np.errstate(over="ignore", invalid="ignore"):
            xb1, xb2, xs1, xs2 = self.levels(z)

            def make(bp, bm, q, dq):
                phi = lambda x: bp * np.exp(th * (x - xb2)) + bm * np.exp(-th * (x - xb1)) + npoly.polyval(x, q)
                dphi = lambda x: th * (bp * np.exp(th * (x - xb2)) - bm * np.exp(-th * (x - xb1))) + npoly.polyval(x, dq)
                return phi, dphi

            phi1, dphi1 = make(z[0], z[1], self.p[0], self.dp[0])
            phi2, dphi2 = make(z[2], z[3], self.p[1], self.dp[1])
            return _pasting_equations(phi1, dphi1, phi2, dphi2, xb1, xb2, xs1, xs2, self.spec)

    def to_params(self, z) -> EquilibriumParams:
        xb1, xb2, xs1, xs2 = self.levels(z)
        th = self.theta
        return EquilibriumParams(
            z[0] * math.exp(-th * xb2),
            z[1] * math.exp(th * xb1),
            z[2] * math.exp(-th * xb2),
            z[3] * math.exp(th * xb1),
            xb1,
            xb2,
            xs1,
            xs2,
        )

    def from_params(self, p: EquilibriumParams) -> np.ndarray:
        p.check()
        th = self.theta
        span = p.xbar2 - p.xbar1
        return np.array(
            [
                p.a11 * math.exp(th * p.xbar2),
                p.a12 * math.exp(-th * p.xbar1),
                p.a21 * math.exp(th * p.xbar2),
                p.a22 * math.exp(-th * p.xbar1),
                0.5 * (p.xbar1 + p.xbar2),
                math.log(0.5 * span),
                logit((p.xstar1 - p.xbar1) / span),
                logit((p.xstar2 - p.xbar1) / span),
            ]
        )

    def fit_coefficients(self, levels_z) -> np.ndarray:
        """Given (m, g, t1, t2), least-squares b's; the residual is affine in them."""
        z = np.concatenate([np.zeros(4), levels_z])
        r0 = self.residual(z)
        cols = []
        for k in range(4):
            e = z.copy()
            e[k] = 1.0
            cols.append(self.residual(e) - r0)
        J = np.array(cols).T
        b = np.zeros(4)
        for rows, idx in ((slice(0, 4), [0, 1]), (slice(4, 8), [2, 3])):
            sol, *_ = np.linalg.lstsq(J[rows][:, idx], -r0[rows], rcond=None)
            b[idx] = sol
        z[:4] = b
        return z

    @property
    def translation_invariant(self) -> bool:
        # with affine payoffs only differences of levels enter the equations
        return len(self.spec.f1) <= 2 and len(self.spec.f2) <= 2

    def jacobian(self, z, r, free) -> np.ndarray:
        J = np.zeros((8, 8))
        for k in free:
            h = 1e-6 * max(1.0, abs(z[k]))
            zp, zm = z.copy(), z.copy()
            zp[k] += h
            zm[k] -= h
            J[:, k] = (self.residual(zp) - self.residual(zm)) / (2 * h)
        return J


def _damped_newton(system: _System, z0, tol: float, max_iter: int = 100):
    z = np.asarray(z0, dtype=float).copy()
    free = list(range(8))
    if system.translation_invariant:
        # a one-parameter family of roots; pin the centre at the payoff crossing
        z[4] = payoff_crossing(system.spec)
        free.remove(4)
    r = system.residual(z)
    if not np.all(np.isfinite(r)):
        return None, math.inf
    polish = 0
    for _ in range(max_iter):
        nr = float(np.max(np.abs(r)))
        if nr <= tol:
            polish += 1
            if polish > 3 or nr == 0.0:
                break
        J = system.jacobian(z, r, free)
        if not np.all(np.isfinite(J)):
            return None, math.inf
        dz, *_ = np.linalg.lstsq(J, -r, rcond=None)
        n2 = np.linalg.norm(r)
        alpha = 1.0
        while alpha > 1e-10:
            zn = z + alpha * dz
            rn = system.residual(zn)
            if np.all(np.isfinite(rn)) and np.linalg.norm(rn) < (1 - 1e-4 * alpha) * n2:
                break
            alpha *= 0.5
        else:
            break  # no descent: converged to rounding level or stuck
        z, r = zn, rn
    return z, float(np.max(np.abs(r)))


def payoff_crossing(spec: GameSpec) -> float:
    """A point where f1 = f2 with f1 - f2 increasing, nearest the origin; 0 if none."""
    d = np.zeros(max(len(spec.f1), len(spec.f2)))
    d[: len(spec.f1)] += spec.f1
    d[: len(spec.f2)] -= spec.f2
    if len(d) == 2:
        return float(-d[0] / d[1]) if d[1] > 0 else 0.0
    dd = npoly.polyder(d) if len(d) > 1 else np.zeros(1)
    roots = npoly.polyroots(d) if len(d) > 1 and np.any(d[1:]) else np.array([])
    real = [r.real for r in np.atleast_1d(roots) if abs(r.imag) < 1e-9 and npoly.polyval(r.real, dd) > 0]
    return float(min(real, key=abs)) if real else 0.0


def surrogate_guess(spec: GameSpec) -> tuple[EquilibriumParams | None, float, float]:
    """Closed form of a symmetric linear game matched to the payoffs at their crossing.

    Scaling f by k is the same game as dividing every cost by k, so the payoffs are
    replaced by x - s1, s2 - x around the crossing x0 with costs divided by the mean
    slope there. Returns (params or None, x0, half-width of the surrogate interval).
    """
    x0 = payoff_crossing(spec)
    k1 = npoly.polyval(x0, npoly.polyder(spec.f1)) if len(spec.f1) > 1 else 0.0
    k2 = -npoly.polyval(x0, npoly.polyder(spec.f2)) if len(spec.f2) > 1 else 0.0
    k = 0.5 * (k1 + k2)
    if not k > 0:
        k = 1.0
    lam = spec.lam / k
    lam = min(lam, 0.5 / spec.rho)
    lam_t = min(spec.lam_tilde / k, lam)
    c, c_t = spec.c / k, min(spec.c_tilde / k, spec.c / k)
    sur = GameSpec(spec.sigma, spec.rho, c, c_t, lam, lam_t, (-(x0 - 1.0), 1.0), (x0 + 1.0, -1.0))
    try:
        p, _ = closed_form_equilibrium(sur)
    except (SpecError, OrderConditionError, ValueError, ArithmeticError):
        return None, x0, 1.0
    return p, x0, 0.5 * (p.xbar2 - p.xbar1)


def second_order_ok(p: EquilibriumParams, spec: GameSpec) -> bool:
    b1, b2 = phi_bases(spec, p)
    return b1(p.xstar1, 2) <= 0 and b2(p.xstar2, 2) <= 0


@dataclass
class SolveInfo:
    starts: int = 0
    residual: float = math.inf
    start_kind: str = ""
    rejected: list = field(default_factory=list)


def _starts(system: _System, spec: GameSpec, guess, max_starts: int, seed: int):
    if isinstance(guess, EquilibriumParams):
        yield "given", system.from_params(guess)
    sur, x0, half = surrogate_guess(spec)
    if guess == "auto" and sur is not None:
        z = system.from_params(sur)
        yield "surrogate", system.fit_coefficients(z[4:])
    half = half if half > 0 and math.isfinite(half) else 1.0
    sampler = qmc.Halton(d=4, scramble=True, seed=seed)
    lo = np.array([x0 - half, math.log(half) - 2.5, -4.0, -4.0])
    hi = np.array([x0 + half, math.log(half) + 2.5, 4.0, 4.0])
    while True:
        u = qmc.scale(sampler.random(1), lo, hi)[0]
        yield "halton", system.fit_coefficients(u)


def solve_system(
    spec: GameSpec,
    guess="auto",
    tol: float = 1e-9,
    max_starts: int = 64,
    seed: int = 0,
    return_info: bool = False,
):
    """Root of the pasting system that satisfies ordering and second-order conditions.

    ``guess`` is an EquilibriumParams, ``"auto"`` (surrogate closed form, then
    Halton starts) or ``"halton"`` (Halton starts only).
    """
    if not (isinstance(guess, EquilibriumParams) or guess in ("auto", "halton")):
        raise ValueError("guess must be EquilibriumParams, 'auto' or 'halton'")
    system = _System(spec)
    info = SolveInfo()
    for kind, z0 in _starts(system, spec, guess, max_starts, seed):
        if info.starts >= max_starts:
            break
        info.starts += 1
        z, res = _damped_newton(system, z0, tol)
        if z is None or res > tol:
            info.rejected.append((kind, "no convergence", res))
            continue
        try:
            p = system.to_params(z).check()
            res = system_residual(p, spec).max_abs
        except (OrderConditionError, OverflowError):
            info.rejected.append((kind, "invalid root", res))
            continue
        if res > tol:
            info.rejected.append((kind, "residual after conversion", res))
            continue
        if not second_order_ok(p, spec):
            info.rejected.append((kind, "second-order condition", res))
            continue
        info.residual, info.start_kind = res, kind
        return (p, info) if return_info else p
    raise SolverError(f"no admissible root after {info.starts} starts; last rejections: {info.rejected[-3:]}")


# --- intervention operators --------------------------------------------------


def _suffix_sup(V, y: np.ndarray, idx, lam: float, c: float, tie_tol: float):
    """For x = y[i], sup over y' >= x of V(y') - c - lam (y' - x), refined off-grid.

    Returns (values, argmax). Ties go to the grid point nearest x.
    """
    n = len(y)
    g = np.asarray(V(y), dtype=float) - lam * y
    best = np.empty(n, dtype=np.int64)
    best[-1] = n - 1
    for i in range(n - 2, -1, -1):
        j = best[i + 1]
        best[i] = i if g[i] >= g[j] - tie_tol else j

    obj = lambda t: -(V(t) - lam * t)
    cache: dict = {}

    def refine(a, b):
        key = (a, b)
        if key not in cache:
            r = minimize_scalar(obj, bounds=(y[a], y[b]), method="bounded", options={"xatol": 1e-12 * max(1.0, abs(y[a]))})
            cache[key] = (-float(r.fun), float(r.x))
        return cache[key]

    h = np.diff(y)
    idx = np.atleast_1d(idx)
    vals, args = np.empty(len(idx)), np.empty(len(idx))
    for k, i in enumerate(idx):
        j = best[i]
        gv, ya = g[j], y[j]
        if j > i and j < n - 1:
            cand = refine(j - 1, j + 1)
        elif j == i and i < n - 1:
            eps = 1e-7 * h[i]
            rising = (V(y[i] + eps) - lam * (y[i] + eps)) > g[i]
            cand = refine(i, i + 1) if rising else None
        else:
            cand = None
        if cand is not None and cand[0] > gv + tie_tol:
            gv, ya = cand
        vals[k] = gv + lam * y[i] - c
        args[k] = ya
    return vals, args - y[idx]


def _operator_grid(V, y: np.ndarray, player: int, lam: float, c: float, idx=None, tie_tol: float = 1e-12):
    """(M V, delta) at x = y[idx] for the given player on a sorted search grid."""
    idx = np.arange(len(y)) if idx is None else np.atleast_1d(idx)
    if player == 1:
        return _suffix_sup(V, y, idx, lam, c, tie_tol)
    # player 2 impulses are negative: mirror the state
    n = len(y)
    u = -y[::-1]
    vals, d = _suffix_sup(lambda t: V(-np.asarray(t)), u, n - 1 - idx, lam, c, tie_tol)
    return vals, -d


def _search_bounds(v, width=None):
    p = v.params
    W = 2 * (p.xbar2 - p.xbar1) if width is None else width
    return p.xbar1 - W, p.xbar2 + W


def intervention_operator(v, x: float, spec: GameSpec, player: int, bounds=None, n_grid: int = 2001):
    """(M_i V(x), delta_i(x)) for player ``player``.

    ``v`` is a PiecewiseValue or any vectorized callable; a plain callable needs
    ``bounds=(lo, hi)`` for the search range of post-impulse states.
    """
    if player not in (1, 2):
        raise ValueError("player must be 1 or 2")
    lo, hi = _search_bounds(v) if bounds is None else bounds
    scale = max(1.0, abs(float(v(x))))
    if player == 1:
        y = np.linspace(x, max(x, hi), n_grid) if hi > x else np.array([x])
        vals, d = _operator_grid(v, y, 1, spec.lam, spec.c, [0], 1e-12 * scale)
    else:
        y = np.linspace(min(x, lo), x, n_grid) if lo < x else np.array([x])
        vals, d = _operator_grid(v, y, 2, spec.lam, spec.c, [len(y) - 1], 1e-12 * scale)
    return float(vals[0]), float(d[0])


# --- certification -----------------------------------------------------------


@dataclass
class VerificationReport:
    grid: np.ndarray
    tol: float
    scale: float
    ode_residual_max: float
    m_inequality_max: tuple[float, float]
    m_equality_max: tuple[float, float]
    h_equality_max: float
    sign_condition_max: float
    contregion_const_max: tuple[float, float]
    contregion_min_gap: tuple[float, float]
    pasting: PastingResidual
    checks: dict
    passed: bool

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": dict(self.checks),
            "tolerance": self.tol,
            "payoff_scale": self.scale,
            "grid": {"size": int(len(self.grid)), "min": float(self.grid[0]), "max": float(self.grid[-1])},
            "ode_residual_max": self.ode_residual_max,
            "m_inequality_max": list(self.m_inequality_max),
            "m_equality_max": list(self.m_equality_max),
            "h_equality_max": self.h_equality_max,
            "sign_condition_max": self.sign_condition_max,
            "contregion_const_max": list(self.contregion_const_max),
            "contregion_min_gap": list(self.contregion_min_gap),
            "pasting": self.pasting.to_dict(),
            "pasting_max": self.pasting.max_abs,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def certification_grid(p: EquilibriumParams, n_grid: int = 4001, width: float | None = None) -> np.ndarray:
    W = 2 * (p.xbar2 - p.xbar1) if width is None else width
    g = np.linspace(p.xbar1 - W, p.xbar2 + W, n_grid)
    return np.unique(np.concatenate([g, [p.xbar1, p.xbar2, p.xstar1, p.xstar2]]))


def _max0(a) -> float:
    return float(np.max(a)) if np.size(a) else 0.0


def verify_candidate(
    p: EquilibriumParams,
    spec: GameSpec,
    n_grid: int = 4001,
    width: float | None = None,
    tol: float = 1e-6,
) -> VerificationReport:
    """Check the QVI conditions for the candidate built from ``p`` on a grid.

    All tolerances are ``tol`` times max(1, max |V_i| on the grid).
    """
    V1, V2 = value_functions(spec, p)
    x = certification_grid(p, n_grid, width)
    v1, v2 = V1(x), V2(x)
    scale = max(1.0, float(np.max(np.abs(v1))), float(np.max(np.abs(v2))))
    atol = tol * scale
    tie = 1e-13 * scale

    inside = (x > p.xbar1) & (x < p.xbar2)
    ode = max(
        _max0(np.abs(ode_residual(V1.basis, spec.f1, spec.rho, spec.sigma, x[inside]))),
        _max0(np.abs(ode_residual(V2.basis, spec.f2, spec.rho, spec.sigma, x[inside]))),
    )

    M1, d1 = _operator_grid(V1, x, 1, spec.lam, spec.c, tie_tol=tie)
    M2, d2 = _operator_grid(V2, x, 2, spec.lam, spec.c, tie_tol=tie)
    own1, own2 = x <= p.xbar1, x >= p.xbar2
    gap1, gap2 = M1 - v1, M2 - v2
    m_ineq = (_max0(gap1), _max0(gap2))
    m_eq = (_max0(np.abs(gap1[own1])), _max0(np.abs(gap2[own2])))

    # H_i V_i on the opponent's region, using the opponent's optimal impulse
    H1 = V1(x[own2] + d2[own2]) + spec.c_tilde + spec.lam_tilde * np.abs(d2[own2])
    H2 = V2(x[own1] + d1[own1]) + spec.c_tilde + spec.lam_tilde * np.abs(d1[own1])
    h_eq = max(_max0(np.abs(H1 - v1[own2])), _max0(np.abs(H2 - v2[own1])))

    # on the own region V_i is linear, so the generator term vanishes
    sign = max(
        _max0(-spec.rho * v1[own1] + npoly.polyval(x[own1], spec.f1)),
        _max0(-spec.rho * v2[own2] + npoly.polyval(x[own2], spec.f2)),
    )

    # V_i - M_i V_i equals c away from the target on the far side, and stays positive off the own region
    far1, far2 = x > p.xstar1, x < p.xstar2
    cont_const = (_max0(np.abs(-gap1[far1] - spec.c)), _max0(np.abs(-gap2[far2] - spec.c)))
    off1, off2 = x > p.xbar1, x < p.xbar2
    min_gap = (float(np.min(-gap1[off1])) if off1.any() else math.inf, float(np.min(-gap2[off2])) if off2.any() else math.inf)

    pasting = system_residual(p, spec)
    checks = {
        "ode_residual": ode <= atol,
        "m_inequality": max(m_ineq) <= atol,
        "m_equality": max(m_eq) <= atol,
        "h_equality": h_eq <= atol,
        "sign_condition": sign <= atol,
        "contregion": max(cont_const) <= atol and min(min_gap) > -atol,
        "pasting": pasting.max_abs <= atol,
    }
    return VerificationReport(
        grid=x,
        tol=tol,
        scale=scale,
        ode_residual_max=ode,
        m_inequality_max=m_ineq,
        m_equality_max=m_eq,
        h_equality_max=h_eq,
        sign_condition_max=sign,
        contregion_const_max=cont_const,
        contregion_min_gap=min_gap,
        pasting=pasting,
        checks=checks,
        passed=all(checks.values()),
    )


def second_derivative_sign_changes(p: EquilibriumParams, spec: GameSpec, player: int = 2, n: int = 20001) -> np.ndarray:
    """Approximate points in (xbar1, xbar2) where phi_i'' changes sign."""
    b = phi_bases(spec, p)[player - 1]
    x = np.linspace(p.xbar1, p.xbar2, n)[1:-1]
    s = np.sign(b(x, 2))
    k = np.nonzero(s[:-1] * s[1:] < 0)[0]
    return 0.5 * (x[k] + x[k + 1])


def solve(spec: GameSpec, method: str = "auto", **kw) -> EquilibriumParams:
    """Closed form when the game is symmetric linear (or ``method='closed'``), else Newton."""
    if method not in ("auto", "closed", "numeric"):
        raise ValueError("method must be auto, closed or numeric")
    if method == "closed" or (method == "auto" and is_symmetric_linear(spec)):
        if not is_symmetric_linear(spec):
            raise SpecError("symmetric-linear", "not symmetric-linear")
        return closed_form_equilibrium(spec)[0]
    return solve_system(spec, **kw)
