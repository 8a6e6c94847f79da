import math

import numpy as np
import pytest

from impulse_game import _kernels as kern
from impulse_game._accel import HAVE_NUMBA
from impulse_game.model import StrategyError, ThresholdStrategy, strategies_from_params
from impulse_game.simulate import (
    SimConfig,
    SimulationError,
    calibrate_bias,
    nash_deviation_test,
    path_diagnostics,
    run_paths,
    select_horizon,
    simulate_batch,
    simulate_paths,
    simulate_trace,
    write_trace_csv,
)


@pytest.fixture(scope="module")
def eq(p1_eq):
    return strategies_from_params(p1_eq[0])


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(0.0, 0.0, 1.0, 10)
    with pytest.raises(ValueError):
        SimConfig(0.0, 0.1, 1.0, 0)
    assert SimConfig(0.0, 0.01, 1.0, 1).n_steps == 100


def test_repeatable_for_fixed_seed(problem1, eq):
    a = run_paths(problem1, [(0.0, *eq)], 0.05, 20.0, 64, seed=7)
    b = run_paths(problem1, [(0.0, *eq)], 0.05, 20.0, 64, seed=7)
    c = run_paths(problem1, [(0.0, *eq)], 0.05, 20.0, 64, seed=8)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("bridge", [False, True])
def test_backends_agree(problem1, eq, bridge):
    cfgs = [(0.0, *eq), (eq[0].threshold, *eq), (2.5, *eq)]
    kw = dict(dt=0.05, horizon=30.0, n_paths=40, seed=3, substeps=2, fine=[False, True, True], bridge=bridge)
    a = run_paths(problem1, cfgs, backend="numba", **kw)
    b = run_paths(problem1, cfgs, backend="numpy", **kw)
    assert np.allclose(a.data, b.data, rtol=1e-12, atol=1e-12)


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_threads_do_not_change_results(problem1, eq):
    kw = dict(dt=0.05, horizon=20.0, n_paths=33, seed=1)
    a = run_paths(problem1, [(0.0, *eq)], threads=1, **kw)
    b = run_paths(problem1, [(0.0, *eq)], threads=3, **kw)
    assert np.array_equal(a.data, b.data)


def test_standard_error_shrinks_with_paths(problem1, eq):
    r1 = simulate_paths(problem1, *eq, SimConfig(0.0, 0.05, 50.0, 2000, seed=11))
    r2 = simulate_paths(problem1, *eq, SimConfig(0.0, 0.05, 50.0, 4000, seed=11))
    for a, b in ((r1.j1_se, r2.j1_se), (r1.j2_se, r2.j2_se)):
        assert b / a == pytest.approx(1 / math.sqrt(2), rel=0.10)


def test_uncontrolled_limit(problem1):
    # thresholds pushed out of reach: the payoff is the discounted running payoff alone
    s1, s2 = ThresholdStrategy(1, -1e9, 0.0), ThresholdStrategy(2, 1e9, 0.0)
    dt, T, x0 = 0.01, 300.0, 0.5
    cfg = SimConfig(x0, dt, T, 2000, seed=5)
    est = simulate_paths(problem1, s1, s2, cfg)
    disc = dt * sum(math.exp(-problem1.rho * k * dt) for k in range(cfg.n_steps))
    assert est.interventions_p1 == 0 and est.interventions_p2 == 0
    assert abs(est.j2_mean - (3.0 - x0) * disc) <= 3 * est.j2_se
    assert abs(est.j1_mean - (x0 + 3.0) * disc) <= 3 * est.j1_se
    # and as T grows this tends to (s2 - x0) / rho
    assert (3.0 - x0) * disc == pytest.approx((3.0 - x0) / problem1.rho, rel=1e-2)


def test_truncation_bound_below_eps(problem1, eq):
    T, cf = select_horizon(problem1, *eq, eps=1e-3)
    est = simulate_paths(problem1, *eq, SimConfig(0.0, 0.5, T, 4, seed=0))
    assert est.truncation_bound <= 1e-3 * (1 + 1e-9)
    assert T == pytest.approx(math.log(cf / (problem1.rho * 1e-3)) / problem1.rho)


def test_overshoot_and_first_impulse(problem1, eq):
    dt = 0.01
    res = run_paths(problem1, [(eq[0].target, *eq)], dt, 20.0, 10000, seed=2)
    assert np.max(res.column(0, kern.OVERSHOOT)) <= 6 * problem1.sigma * math.sqrt(dt)
    # starting at a target nobody acts at time 0
    assert np.all(res.column(0, kern.T_FIRST) > 0)
    assert np.all(np.isfinite(res.column(0, kern.N1)))


def test_immediate_impulse_at_threshold(problem1, eq, p1_eq):
    res = run_paths(problem1, [(eq[1].threshold + 1.0, *eq)], 0.05, 1.0, 8, seed=0)
    assert np.all(res.column(0, kern.T_FIRST) == 0.0)
    assert np.all(res.column(0, kern.N2) >= 1)


def test_single_path_has_no_standard_error(problem1, eq):
    est = simulate_paths(problem1, *eq, SimConfig(0.0, 0.1, 5.0, 1))
    assert math.isnan(est.j1_se) and math.isnan(est.j2_se)
    d = est.to_dict()
    assert d["j1_se"] is None and "se_note" in d


def test_trace_replays_batch_path(problem1, eq, tmp_path):
    x0 = eq[1].threshold - 0.05
    res = run_paths(problem1, [(x0, *eq)], 0.02, 600.0, 5, seed=4)
    tr = simulate_trace(problem1, *eq, x0, 0.02, 600.0, seed=4, path_index=3)
    assert tr.j1 == pytest.approx(res.data[3, 0, kern.J1], rel=1e-11)
    assert tr.j2 == pytest.approx(res.data[3, 0, kern.J2], rel=1e-11)
    assert len(tr.events) == res.data[3, 0, kern.N1] + res.data[3, 0, kern.N2]
    diag = path_diagnostics(tr)
    assert diag.ok and diag.n_events > 0
    out = tmp_path / "trace.csv"
    write_trace_csv(tr, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x,player,impulse,discounted_cost" and len(lines) == len(tr.events) + 1


def test_diagnostics_flag_tampered_landing(problem1, eq):
    tr = simulate_trace(problem1, *eq, eq[1].threshold + 0.5, 0.02, 10.0, seed=0)
    i = int(round(tr.events[0][0] / 0.02))
    tr.x[i] += 0.1
    assert not path_diagnostics(tr).landings_exact


def test_nonfinite_accumulation_raises(problem1, eq):
    bad = problem1.replace(f1=(1e308, 1e308))
    with pytest.raises(SimulationError) as ei:
        run_paths(bad, [(0.0, *eq)], 0.1, 5.0, 3)
    assert "first_bad_path" in ei.value.diagnostics


def test_discretization_bias_shrinks(problem1, eq):
    gaps = []
    for dt in (0.4, 0.2, 0.1):
        res = run_paths(problem1, [(0.0, *eq)] * 2, dt, 200.0, 4000, seed=0, substeps=2, fine=[False, True])
        gaps.append(abs(float(np.mean(res.column(0, kern.J2) - res.column(1, kern.J2)))))
    assert gaps[0] > gaps[1] > gaps[2]


def test_batch_shares_paths(problem1, eq):
    ests, res = simulate_batch(problem1, [(0.0, *eq), (0.0, *eq)], 0.1, 20.0, 50, seed=1)
    assert ests[0] == ests[1]


def test_calibration_shapes(problem1, eq):
    cal = calibrate_bias(problem1, [(0.0, *eq), (1.0, *eq)], 0.1, 30.0, 200, seed=0)
    assert cal.kappa.shape == (2, 2) and np.all(cal.kappa >= 0)
    assert cal.allowance(1.0) == pytest.approx(3.0 + cal.kappa_max * math.sqrt(0.1))


def test_deviation_against_itself(problem1, eq):
    gaps = nash_deviation_test(problem1, eq, [eq[1]], 0.0, 0.05, 20.0, 100, seed=0)
    assert gaps[0].gap == 0.0 and gaps[0].se == 0.0


def test_deviation_input_checks(problem1, eq):
    s1, s2 = eq
    with pytest.raises(StrategyError):
        nash_deviation_test(problem1, eq, [ThresholdStrategy(2, s2.threshold, s2.threshold + 1.0)], 0.0, 0.1, 5.0, 4)
    with pytest.raises(StrategyError):
        nash_deviation_test(problem1, eq, [s1, s2], 0.0, 0.1, 5.0, 4)
    assert nash_deviation_test(problem1, eq, [], 0.0, 0.1, 5.0, 4) == []
