import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from impulse_game.model import GameSpec, SpecError, phi_bases, validate_spec, value_functions
from impulse_game.symmetric import (
    F,
    RootError,
    asymptotic_limits,
    closed_form_equilibrium,
    derived_coefficients,
    reduced_residual,
    reduced_solution,
    reduced_variables,
    solve_log_ratio,
    solve_xi,
    xi_derivatives,
)
from oracles import F_log, explicit_tuple, xi_bisection

P1 = dict(sigma=0.15, rho=0.02, c=100.0, c_tilde=0.0, lam=15.0, lam_tilde=15.0, f1=(3.0, 1.0), f2=(3.0, -1.0))


def theta_eta(s):
    return s.theta, (1 - s.lam * s.rho) / s.rho


# -- the scalar root -------------------------------------------------------

@pytest.mark.parametrize("c", [1e-6, 0.1, 1.0, 10.0, 100.0, 300.0])
def test_xi_matches_bisection_oracle(problem1, c):
    th, eta = theta_eta(problem1)
    xi = solve_xi(c, th, eta)
    assert 0 < xi < eta
    # F is flat near a small root, so compare to within its conditioning
    cond = 1e-11 / abs(2 - 2 * eta**2 / (eta**2 - xi**2))
    assert abs(xi - xi_bisection(c, th, eta, tol=0.0)) <= 1e-11 * xi + cond
    assert abs(F_log(xi, c, th, eta)) < 1e-10 * max(1.0, th * c)


@pytest.mark.parametrize("c", [1e-3, 1.0, 100.0, 1e4, 1e7])
def test_log_ratio_consistent_with_xi(problem1, c):
    th, eta = theta_eta(problem1)
    L = solve_log_ratio(c, th, eta)
    xi = eta * math.tanh(L / 2)
    if c <= 300:
        cond = 1e-11 / abs(2 - 2 * eta**2 / (eta**2 - xi**2))
        assert abs(xi - solve_xi(c, th, eta)) <= 1e-12 * xi + cond
    # residual evaluated in L, where it stays resolvable
    assert abs(eta * L - 2 * xi - th * c) < 1e-10 * max(1.0, th * c)


def test_unresolvable_root_raises(problem1):
    th, eta = theta_eta(problem1)
    with pytest.raises(RootError):
        solve_xi(1e7, th, eta)


def test_xi_monotone_in_c(problem1):
    th, eta = theta_eta(problem1)
    cs = np.geomspace(1e-4, 400, 60)
    xs = [solve_xi(c, th, eta) for c in cs]
    assert np.all(np.diff(xs) > 0)


@pytest.mark.parametrize("c", [1.0, 10.0, 100.0, 250.0])
def test_xi_derivatives_against_finite_differences(problem1, c):
    th, eta = theta_eta(problem1)
    h = 1e-4 * c
    x0, xp, xm = (solve_xi(v, th, eta) for v in (c, c + h, c - h))
    d1, d2 = xi_derivatives(x0, c, th, eta)
    assert d1 > 0 and d2 < 0
    assert d1 == pytest.approx((xp - xm) / (2 * h), rel=1e-5)
    assert d2 == pytest.approx((xp - 2 * x0 + xm) / h**2, rel=1e-5)


def test_xi_prime_vanishes_at_large_cost(problem1):
    th, eta = theta_eta(problem1)
    vals = []
    for c in (100.0, 250.0, 500.0):
        L = solve_log_ratio(c, th, eta)
        xi = eta * math.tanh(L / 2)
        vals.append(xi_derivatives(xi, c, th, eta)[0])
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-3 * vals[0]


def test_F_sign_structure(problem1):
    th, eta = theta_eta(problem1)
    xi = solve_xi(10.0, th, eta)
    assert F(0.5 * xi, 10.0, th, eta) > 0 > F(0.5 * (xi + eta), 10.0, th, eta)


# -- the 8-tuple -----------------------------------------------------------

def test_problem1_against_explicit_formulas(problem1):
    p, d = closed_form_equilibrium(problem1)
    ref, xi = explicit_tuple(-3.0, 3.0, 0.02, 0.15, 100.0, 0.0, 15.0, 15.0)
    assert d.xi == pytest.approx(xi, rel=1e-11)
    for k, v in ref.items():
        assert getattr(p, k) == pytest.approx(v, rel=1e-9, abs=1e-12), k


def test_problem2_against_explicit_formulas(problem2):
    p, _ = closed_form_equilibrium(problem2)
    ref, _ = explicit_tuple(-3.0, 3.0, 0.02, 0.15, 100.0, 50.0, 0.0, 0.0)
    for k, v in ref.items():
        assert getattr(p, k) == pytest.approx(v, rel=1e-9, abs=1e-12), k


def test_problem1_geometry(problem1):
    p, d = closed_form_equilibrium(problem1)
    assert p.xbar1 + p.xbar2 == pytest.approx(0.0, abs=1e-12)
    assert p.xstar1 + p.xstar2 == pytest.approx(0.0, abs=1e-12)
    assert p.xbar1 < p.xstar2 < d.s_tilde < p.xstar1 < p.xbar2


def test_gain_free_ordering(problem1, problem2):
    # with no fixed gain both targets lie beyond the midpoint; with c_tilde > 0 the order can flip
    p, _ = closed_form_equilibrium(problem1)
    assert p.xstar2 < 0 < p.xstar1


def test_closed_form_rejects_nonpositive_cost(problem1):
    with pytest.raises(SpecError):
        derived_coefficients(problem1, c=0.0)


def test_closed_form_survives_huge_cost(problem1):
    p, d = closed_form_equilibrium(problem1, c=1e7)
    assert np.all(np.isfinite(p.as_array()))
    assert abs(d.root_residual) < 1e-10 * d.theta * 1e7


sym = st.builds(
    lambda sigma, rho, c, ct_frac, lam_t, dlam, s1, w: GameSpec(
        sigma=sigma, rho=rho, c=c, c_tilde=c * ct_frac, lam=lam_t + dlam, lam_tilde=lam_t, f1=(-s1, 1.0), f2=(s1 + w, -1.0)
    ),
    st.floats(0.05, 1.0), st.floats(0.01, 0.2), st.floats(0.01, 300.0), st.floats(0.0, 0.95),
    st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(-5.0, 5.0), st.floats(0.1, 10.0),
)


def _ok(s):
    try:
        validate_spec(s)
        return True
    except SpecError:
        return False


@settings(max_examples=80, deadline=None)
@given(sym)
def test_closed_form_structural_invariants(s):
    if not _ok(s):
        return
    p, d = closed_form_equilibrium(s)
    th = d.theta
    # order, symmetry and the midpoint relations
    assert p.xbar1 < min(p.xstar1, p.xstar2) and max(p.xstar1, p.xstar2) < p.xbar2
    tol = 1e-9 * max(1.0, abs(d.s_tilde), abs(p.xbar2 - d.s_tilde))
    assert abs(p.xbar1 + p.xbar2 - 2 * d.s_tilde) <= tol
    assert abs(p.xstar1 + p.xstar2 - 2 * d.s_tilde) <= tol
    # continuation band width and target-threshold gap are fixed by xi alone
    assert (p.xbar2 - p.xstar2) * th == pytest.approx(d.log_ratio, rel=1e-9)
    # coefficient mirror relations
    e = math.exp(2 * th * d.s_tilde)
    assert p.a11 == pytest.approx(p.a22 / e, rel=1e-9, abs=1e-300)
    assert p.a12 == pytest.approx(p.a21 * e, rel=1e-9, abs=1e-300)
    # sign structure: A_i1 < 0 for the own-threshold exponential, A_i2 term sign follows
    assert p.a22 < 0


@settings(max_examples=80, deadline=None)
@given(sym)
def test_reduced_system_and_its_explicit_solution(s):
    if not _ok(s):
        return
    p, d = closed_form_equilibrium(s)
    # the exponential variables only stay representable for a moderate band width
    assume(d.log_ratio < 15)
    yb, ys, A1, A2 = reduced_variables(p, d)
    scale = max(1.0, abs(A1), abs(A2), d.eta) ** 2 * max(1.0, yb)
    assert np.max(np.abs(reduced_residual(s, p, d))) <= 1e-8 * scale
    alt = reduced_solution(s, d)
    assert np.allclose(alt, (yb, ys, A1, A2), rtol=1e-7)
    # A1 A2 = -M and A1 + A2 = -2N
    assert A1 * A2 == pytest.approx(-d.eta2_minus_xi2, rel=1e-8)
    assert A1 > 0 > A2


@settings(max_examples=60, deadline=None)
@given(sym)
def test_second_order_conditions_at_targets(s):
    if not _ok(s):
        return
    p, _ = closed_form_equilibrium(s)
    b1, b2 = phi_bases(s, p)
    assert b2(p.xstar2, 2) < 0 < b2(p.xbar2, 2)
    assert b1(p.xstar1, 2) < 0 < b1(p.xbar1, 2)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.5), st.floats(0.01, 0.1), st.floats(0.0, 3.0))
def test_band_widens_with_cost(sigma, rho, lam):
    s = GameSpec(sigma, rho, 1.0, 0.0, lam, lam, (1.0, 1.0), (1.0, -1.0))
    if not _ok(s):
        return
    prev = None
    for c in np.geomspace(0.01, 200, 25):
        p, _ = closed_form_equilibrium(s, c=c)
        if prev is not None:
            assert p.xbar2 > prev.xbar2 and p.xbar1 < prev.xbar1
            # without a fixed gain the targets also move outward
            assert p.xstar1 > prev.xstar1 and p.xstar2 < prev.xstar2
        prev = p


def test_second_derivative_single_sign_change(problem1):
    p, _ = closed_form_equilibrium(problem1)
    _, b2 = phi_bases(problem1, p)
    x = np.linspace(p.xstar2, p.xbar2, 20001)
    sgn = np.sign(b2(x, 2))
    assert np.count_nonzero(np.diff(sgn) != 0) == 1


# -- limits ----------------------------------------------------------------

def test_small_cost_limit_rate(problem1):
    lim = asymptotic_limits(problem1)
    assert lim.small_cost_applicable and lim.small_cost_points == 0.0
    gaps = []
    for c in (1e-3, 1e-6, 1e-9):
        p, _ = closed_form_equilibrium(problem1, c=c)
        gaps.append(max(abs(v - lim.small_cost_points) for v in (p.xbar1, p.xbar2, p.xstar1, p.xstar2)))
    # collapse is at the cube-root rate: factor 10 per 1e-3 in c
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[0] / gaps[1] == pytest.approx(10.0, rel=0.05)
    assert gaps[1] / gaps[2] == pytest.approx(10.0, rel=0.05)


def test_small_cost_value_limit(problem1):
    lim = asymptotic_limits(problem1)
    sc = problem1.replace(c=1e-9)
    p, _ = closed_form_equilibrium(sc)
    V1, V2 = value_functions(sc, p)
    x = np.array([-2.0, -0.5, 0.5, 2.0])
    assert np.allclose(V2(x), lim.small_cost_v2(x), atol=1e-2)
    assert np.allclose(V1(x), lim.small_cost_v1(x), atol=1e-2)


def test_large_cost_limit(problem1):
    lim = asymptotic_limits(problem1)
    sc = problem1.replace(c=1e6)
    p, _ = closed_form_equilibrium(sc)
    assert p.xbar2 > 20 and p.xbar1 < -20
    assert p.xstar1 > 1 and p.xstar2 < -1
    x = np.array([-1.0, 0.0, 1.0])
    V1, V2 = value_functions(sc, p)
    assert np.allclose(V1(x), lim.large_cost_v1(x), rtol=1e-3)
    assert np.allclose(V2(x), lim.large_cost_v2(x), rtol=1e-3)


def test_gain_limit(problem2):
    lim = asymptotic_limits(problem2)
    assert lim.gain_limit_applicable and not lim.small_cost_applicable
    p, _ = closed_form_equilibrium(problem2, c=50 + 1e-6)
    assert abs(p.xbar2 - lim.gain_limit_xbar2) < 1e-3
    assert abs(p.xbar1 - lim.gain_limit_xbar1) < 1e-3
    assert abs(p.xstar1 - p.xbar2) < 1e-3 and abs(p.xstar2 - p.xbar1) < 1e-3


def test_gamma_zero_is_rejected(problem2):
    with pytest.raises(SpecError):
        closed_form_equilibrium(problem2, c=50.0)
