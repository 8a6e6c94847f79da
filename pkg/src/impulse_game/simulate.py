"""Monte Carlo estimates of the discounted payoffs under threshold strategies.

Paths are seeded individually from ``SeedSequence(seed).spawn(n_paths)`` and
reduced in path order, so results are reproducible bit for bit and independent
of the backend and of the thread count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import _kernels as kern
from ._accel import resolve_backend, thread_count
from .model import (
    GameSpec,
    StrategyError,
    ThresholdStrategy,
    check_strategies,
)


class SimulationError(ArithmeticError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class SimConfig:
    x0: float
    dt: float
    horizon: float
    n_paths: int
    seed: int = 0
    bridge_correction: bool = False

    def __post_init__(self):
        if not (self.dt > 0 and self.horizon > 0 and self.dt < self.horizon):
            raise ValueError("need 0 < dt < horizon")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon / self.dt - 1e-9))


@dataclass(frozen=True)
class SimulationEstimate:
    j1_mean: float
    j2_mean: float
    j1_se: float
    j2_se: float
    interventions_p1: float
    interventions_p2: float
    truncation_bound: float
    n_paths: int
    max_abs_x: float
    max_overshoot: float
    x0: float
    dt: float
    horizon: float

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("j1_se", "j2_se"):
            if math.isnan(d[k]):
                d[k] = None
                d["se_note"] = "insufficient paths for a standard error"
        return d


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    n = v.shape[0]
    mean = float(np.mean(v))
    se = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return mean, se


def truncation_bound(spec: GameSpec, horizon: float, c_f: float) -> float:
    return math.exp(-spec.rho * horizon) * c_f / spec.rho


def payoff_bound(spec: GameSpec, s1: ThresholdStrategy, s2: ThresholdStrategy, width: float | None = None) -> float:
    """C_f: max |f_i| over the certification grid plus a per-time intervention cost rate.

    The cost rate uses the expected exit time of sigma*W from the continuation
    interval started at the nearer target, (x - a)(b - x) / sigma^2, as the
    typical spacing between impulses.
    """
    a, b = s1.threshold, s2.threshold
    W = 2 * (b - a) if width is None else width
    x = np.linspace(a - W, b + W, 4001)
    fmax = max(float(np.max(np.abs(npoly.polyval(x, spec.f1)))), float(np.max(np.abs(npoly.polyval(x, spec.f2)))))
    gaps = [(t - a) * (b - t) for t in (s1.target, s2.target)]
    spacing = max(min(gaps), 1e-12) / spec.sigma**2
    per_impulse = max(spec.c, spec.c_tilde) + max(spec.lam, spec.lam_tilde) * (b - a)
    return fmax + per_impulse / spacing


def select_horizon(spec: GameSpec, s1: ThresholdStrategy, s2: ThresholdStrategy, eps: float = 1e-3) -> tuple[float, float]:
    """(T, C_f) with T = ln(C_f / (rho eps)) / rho, so the discarded tail is at most eps."""
    c_f = payoff_bound(spec, s1, s2)
    return max(math.log(c_f / (spec.rho * eps)) / spec.rho, 0.0), c_f


@dataclass
class PathResults:
    """Raw per-path, per-configuration outputs, shape (n_paths, K, 7)."""

    data: np.ndarray
    dt: float
    horizon: float
    substeps: int
    fine: np.ndarray

    def column(self, k: int, field_idx: int) -> np.ndarray:
        return self.data[:, k, field_idx]


def _spawn(seed: int, n: int) -> list:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def run_paths(
    spec: GameSpec,
    configs: list[tuple[float, ThresholdStrategy, ThresholdStrategy]],
    dt: float,
    horizon: float,
    n_paths: int,
    seed: int = 0,
    substeps: int = 1,
    fine: list[bool] | None = None,
    bridge: bool = False,
    backend: str | None = None,
    threads: int | None = None,
) -> PathResults:
    """Simulate K configurations (x0, strategy1, strategy2) on shared increments.

    With ``substeps > 1`` each coarse step of length dt is split into equal
    sub-steps; configurations flagged in ``fine`` are advanced on the sub-steps,
    the others on dt with the summed increment.
    """
    for _, a, b in configs:
        check_strategies(a, b)
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    backend = resolve_backend(backend)
    K = len(configs)
    fine_arr = np.zeros(K, dtype=np.bool_) if fine is None else np.asarray(fine, dtype=np.bool_)
    cfg = (
        np.array([c[0] for c in configs], dtype=float),
        np.array([c[1].threshold for c in configs], dtype=float),
        np.array([c[1].target for c in configs], dtype=float),
        np.array([c[2].threshold for c in configs], dtype=float),
        np.array([c[2].target for c in configs], dtype=float),
        fine_arr,
    )
    n_steps = SimConfig(0.0, dt, horizon, n_paths).n_steps
    scalars = (
        float(dt), int(n_steps), int(substeps), float(spec.sigma), float(spec.rho),
        np.asarray(spec.f1, dtype=float), np.asarray(spec.f2, dtype=float),
        float(spec.c), float(spec.c_tilde), float(spec.lam), float(spec.lam_tilde), bool(bridge),
    )
    gens = _spawn(seed, n_paths)
    out = np.zeros((n_paths, K, kern.N_OUT))

    if backend == "numpy":
        kern.run_paths_numpy(gens, *cfg, *scalars, out)
    else:
        nthreads = thread_count() if threads is None else threads
        if nthreads <= 1 or n_paths < 2:
            kern.run_paths_loop(kern.path_kernel, gens, cfg, scalars, out)
        else:
            bounds = np.linspace(0, n_paths, nthreads + 1).astype(int)
            with ThreadPoolExecutor(nthreads) as pool:
                futs = [
                    pool.submit(kern.run_paths_loop, kern.path_kernel, gens[a:b], cfg, scalars, out[a:b])
                    for a, b in zip(bounds[:-1], bounds[1:])
                ]
                for f in futs:
                    f.result()

    acc = out[:, :, [kern.J1, kern.J2]]
    if not np.all(np.isfinite(acc)):
        bad = np.argwhere(~np.isfinite(acc))
        raise SimulationError(
            "non-finite payoff accumulation",
            {"first_bad_path": int(bad[0, 0]), "config": int(bad[0, 1]), "n_bad": int(len(bad))},
        )
    return PathResults(out, dt, horizon, substeps, fine_arr)


def _estimate(spec, res: PathResults, k: int, x0: float, c_f: float) -> SimulationEstimate:
    j1, se1 = _mean_se(res.column(k, kern.J1))
    j2, se2 = _mean_se(res.column(k, kern.J2))
    return SimulationEstimate(
        j1_mean=j1,
        j2_mean=j2,
        j1_se=se1,
        j2_se=se2,
        interventions_p1=float(np.mean(res.column(k, kern.N1))),
        interventions_p2=float(np.mean(res.column(k, kern.N2))),
        truncation_bound=truncation_bound(spec, res.horizon, c_f),
        n_paths=res.data.shape[0],
        max_abs_x=float(np.max(res.column(k, kern.MAXABS))),
        max_overshoot=float(np.max(res.column(k, kern.OVERSHOOT))),
        x0=float(x0),
        dt=res.dt,
        horizon=res.horizon,
    )


def simulate_paths(
    spec: GameSpec,
    s1: ThresholdStrategy,
    s2: ThresholdStrategy,
    cfg: SimConfig,
    backend: str | None = None,
) -> SimulationEstimate:
    res = run_paths(spec, [(cfg.x0, s1, s2)], cfg.dt, cfg.horizon, cfg.n_paths, cfg.seed, bridge=cfg.bridge_correction, backend=backend)
    return _estimate(spec, res, 0, cfg.x0, payoff_bound(spec, s1, s2))


def simulate_batch(
    spec: GameSpec,
    configs: list[tuple[float, ThresholdStrategy, ThresholdStrategy]],
    dt: float,
    horizon: float,
    n_paths: int,
    seed: int = 0,
    bridge: bool = False,
    backend: str | None = None,
) -> tuple[list[SimulationEstimate], PathResults]:
    """Estimates for several configurations under common random numbers."""
    res = run_paths(spec, configs, dt, horizon, n_paths, seed, bridge=bridge, backend=backend)
    ests = [_estimate(spec, res, k, x0, payoff_bound(spec, a, b)) for k, (x0, a, b) in enumerate(configs)]
    return ests, res


@dataclass
class BiasCalibration:
    """Coupled dt / dt/2 estimates and the Richardson constant per (config, player)."""

    coarse: list[SimulationEstimate]
    fine: list[SimulationEstimate]
    kappa: np.ndarray  # shape (K, 2)
    diff_se: np.ndarray  # se of the coupled coarse-fine difference, shape (K, 2)
    dt: float

    @property
    def kappa_max(self) -> float:
        return float(np.max(self.kappa))

    def allowance(self, se: float) -> float:
        return 3.0 * se + self.kappa_max * math.sqrt(self.dt)


def calibrate_bias(
    spec: GameSpec,
    configs: list[tuple[float, ThresholdStrategy, ThresholdStrategy]],
    dt: float,
    horizon: float,
    n_paths: int,
    seed: int = 0,
    backend: str | None = None,
) -> BiasCalibration:
    """Run each configuration at dt and dt/2 on the same Brownian paths.

    kappa = |j(dt) - j(dt/2)| / (sqrt(dt) - sqrt(dt/2)); the dt runs double as the
    main estimates.
    """
    K = len(configs)
    res = run_paths(spec, configs + configs, dt, horizon, n_paths, seed, substeps=2, fine=[False] * K + [True] * K, backend=backend)
    coarse = [_estimate(spec, res, k, configs[k][0], payoff_bound(spec, configs[k][1], configs[k][2])) for k in range(K)]
    fine = [_estimate(spec, res, K + k, configs[k][0], payoff_bound(spec, configs[k][1], configs[k][2])) for k in range(K)]
    denom = math.sqrt(dt) - math.sqrt(dt / 2)
    kappa = np.empty((K, 2))
    dse = np.empty((K, 2))
    for k in range(K):
        for j, col in enumerate((kern.J1, kern.J2)):
            d = res.column(k, col) - res.column(K + k, col)
            m, se = _mean_se(d)
            kappa[k, j] = abs(m) / denom
            dse[k, j] = se
    return BiasCalibration(coarse, fine, kappa, dse, dt)


@dataclass(frozen=True)
class DeviationGap:
    strategy: ThresholdStrategy
    gap: float  # J_i(deviation) - J_i(equilibrium); positive means the deviation pays
    se: float
    j_deviation: float
    j_equilibrium: float
    kappa: float = math.nan  # Richardson constant of the gap, when calibrated

    def allowance(self, dt: float) -> float:
        k = 0.0 if math.isnan(self.kappa) else self.kappa
        return 3.0 * self.se + k * math.sqrt(dt)


def nash_deviation_test(
    spec: GameSpec,
    equilibrium: tuple[ThresholdStrategy, ThresholdStrategy],
    deviations: list[ThresholdStrategy],
    x0: float,
    dt: float,
    horizon: float,
    n_paths: int,
    seed: int = 0,
    calibrate: bool = False,
    backend: str | None = None,
) -> list[DeviationGap]:
    """Gap J_i(deviation, other) - J_i(equilibrium) under common random numbers.

    With ``calibrate`` every configuration is also run at dt/2 on the same paths
    and each gap carries its own Richardson constant.
    """
    s1, s2 = equilibrium
    check_strategies(s1, s2)
    if not deviations:
        return []
    players = {d.player for d in deviations}
    if len(players) != 1:
        raise StrategyError("deviations must all perturb the same player")
    player = players.pop()
    configs = [(x0, s1, s2)]
    for d in deviations:
        pair = (d, s2) if player == 1 else (s1, d)
        check_strategies(*pair)
        configs.append((x0, *pair))
    K = len(configs)
    col = kern.J1 if player == 1 else kern.J2
    if calibrate:
        res = run_paths(spec, configs + configs, dt, horizon, n_paths, seed, substeps=2, fine=[False] * K + [True] * K, backend=backend)
    else:
        res = run_paths(spec, configs, dt, horizon, n_paths, seed, backend=backend)
    base = res.column(0, col)
    out = []
    for k, d in enumerate(deviations, start=1):
        diff = res.column(k, col) - base
        g, se = _mean_se(diff)
        kappa = math.nan
        if calibrate:
            diff_f = res.column(K + k, col) - res.column(K, col)
            kappa = abs(g - float(np.mean(diff_f))) / (math.sqrt(dt) - math.sqrt(dt / 2))
        out.append(
            DeviationGap(d, g, 0.0 if math.isnan(se) and g == 0 else se, float(np.mean(res.column(k, col))), float(np.mean(base)), kappa)
        )
    return out


# --- single-path audit -------------------------------------------------------


@dataclass
class PathTrace:
    """One simulated path with every impulse recorded."""

    t: np.ndarray
    x: np.ndarray  # state at grid times, after any impulse
    events: list = field(default_factory=list)  # (t, x_before, player, impulse, discounted_cost)
    max_increment: float = 0.0
    j1: float = 0.0
    j2: float = 0.0
    s1: ThresholdStrategy | None = None
    s2: ThresholdStrategy | None = None


def simulate_trace(
    spec: GameSpec,
    s1: ThresholdStrategy,
    s2: ThresholdStrategy,
    x0: float,
    dt: float,
    horizon: float,
    seed: int = 0,
    path_index: int = 0,
) -> PathTrace:
    """Replay path ``path_index`` of a ``run_paths`` call (no bridge, no substeps)."""
    check_strategies(s1, s2)
    rng = _spawn(seed, path_index + 1)[path_index]
    n_steps = SimConfig(0.0, dt, horizon, 1).n_steps
    z = np.concatenate([rng.standard_normal(min(kern.CHUNK, n_steps - i)) for i in range(0, n_steps, kern.CHUNK)])
    sq = spec.sigma * math.sqrt(dt)
    q_dt = math.exp(-spec.rho * dt)
    ts = np.arange(n_steps + 1) * dt
    xs = np.empty(n_steps + 1)
    events: list = []
    j1 = j2 = 0.0

    def act(x, t, disc):
        nonlocal j1, j2
        if x <= s1.threshold:
            d = s1.target - x
            j1 -= disc * (spec.c + spec.lam * abs(d))
            j2 += disc * (spec.c_tilde + spec.lam_tilde * abs(d))
            events.append((t, x, 1, d, disc * (spec.c + spec.lam * abs(d))))
            return s1.target
        if x >= s2.threshold:
            d = s2.target - x
            j2 -= disc * (spec.c + spec.lam * abs(d))
            j1 += disc * (spec.c_tilde + spec.lam_tilde * abs(d))
            events.append((t, x, 2, d, disc * (spec.c + spec.lam * abs(d))))
            return s2.target
        return x

    x = act(float(x0), 0.0, 1.0)
    xs[0] = x
    f1, f2 = np.asarray(spec.f1), np.asarray(spec.f2)
    d0 = 1.0
    for i in range(n_steps):
        if i % kern.CHUNK == 0:
            d0 = math.exp(-spec.rho * (i * dt))
        j1 += d0 * kern.horner.py_func(f1, x) * dt
        j2 += d0 * kern.horner.py_func(f2, x) * dt
        d1 = d0 * q_dt
        x = x + sq * z[i]
        x = act(x, ts[i + 1], d1)
        xs[i + 1] = x
        d0 = d1
    return PathTrace(ts, xs, events, float(np.max(np.abs(z))) * sq if n_steps else 0.0, j1, j2, s1, s2)


def write_trace_csv(trace: PathTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "player", "impulse", "discounted_cost"])
        for t, xb, player, d, cost in trace.events:
            w.writerow([f"{t:.12g}", f"{xb:.12g}", player, f"{d:.12g}", f"{cost:.12g}"])


@dataclass(frozen=True)
class PathDiagnostics:
    n_events: int
    landings_exact: bool
    signs_ok: bool
    in_band_after_first: bool
    band_excess: float  # how far X left [xbar1, xbar2] after the first impulse
    max_increment: float
    ok: bool


def path_diagnostics(trace: PathTrace) -> PathDiagnostics:
    """Check impulse bookkeeping of one path and how far X strays past the thresholds."""
    s1, s2 = trace.s1, trace.s2
    step = trace.t[1] - trace.t[0] if len(trace.t) > 1 else 1.0
    landings = signs = True
    excess = 0.0
    for t, xb, player, d, _ in trace.events:
        i = int(round(t / step))
        target = s1.target if player == 1 else s2.target
        landings &= bool(trace.x[i] == target)
        signs &= (d > 0) if player == 1 else (d < 0)
        excess = max(excess, s1.threshold - xb, xb - s2.threshold)
    if trace.events:
        after = trace.x[int(round(trace.events[0][0] / step)) :]
        excess = max(excess, float(s1.threshold - after.min()), float(after.max() - s2.threshold))
    in_band = excess <= trace.max_increment
    return PathDiagnostics(
        len(trace.events), bool(landings), bool(signs), bool(in_band), float(excess), trace.max_increment,
        bool(landings and signs and in_band),
    )
