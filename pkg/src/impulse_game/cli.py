"""impulse-game {solve|verify|simulate|sweep}

Exit codes: 0 ok, 1 invalid input or I/O, 2 solver failure, 3 certification
failure, 4 non-finite simulation. Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .model import (
    BUNDLED,
    OrderConditionError,
    SpecError,
    StrategyError,
    bundled_spec_path,
    is_symmetric_linear,
    load_params,
    load_spec,
    strategies_from_params,
    validate_spec,
    value_functions,
)
from .qvi import SolverError, solve_system, system_residual, verify_candidate
from .simulate import SimConfig, SimulationError, select_horizon, simulate_paths, simulate_trace, write_trace_csv
from .symmetric import closed_form_equilibrium

EXIT_INPUT, EXIT_SOLVER, EXIT_CERT, EXIT_NONFINITE = 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def _spec_path(arg: str) -> Path:
    p = Path(arg)
    if not p.exists() and arg in BUNDLED:
        return bundled_spec_path(arg)
    return p


def _load_spec(arg: str, allow_inversion: bool):
    try:
        return load_spec(_spec_path(arg), allow_cost_inversion=allow_inversion)
    except SpecError as e:
        raise CliError(EXIT_INPUT, "validation", str(e), constraint=e.constraint) from e
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CliError(EXIT_INPUT, "io", f"cannot read spec {arg}: {e}") from e


def _load_params(arg: str):
    try:
        return load_params(arg).check()
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CliError(EXIT_INPUT, "io", f"cannot read params {arg}: {e}") from e
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(EXIT_INPUT, "validation", f"bad params file {arg}: {e}") from e


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, allow_nan=True)
    if out:
        try:
            Path(out).write_text(text + "\n", encoding="utf-8")
        except OSError as e:
            raise CliError(EXIT_INPUT, "io", f"cannot write {out}: {e}") from e
    else:
        print(text)


def _solve(spec, method: str, tol: float, max_starts: int, guess="auto"):
    if method == "closed" or (method == "auto" and is_symmetric_linear(spec)):
        if not is_symmetric_linear(spec):
            raise CliError(EXIT_INPUT, "validation", "not symmetric-linear: the closed form needs f1 = x - s1, f2 = s2 - x")
        try:
            return closed_form_equilibrium(spec)[0], "closed"
        except (SpecError, OrderConditionError, ArithmeticError, ValueError) as e:
            raise CliError(EXIT_SOLVER, "solver", str(e)) from e
    try:
        return solve_system(spec, guess=guess, tol=tol, max_starts=max_starts), "numeric"
    except SolverError as e:
        raise CliError(EXIT_SOLVER, "solver", str(e)) from e


def cmd_solve(a) -> int:
    spec = _load_spec(a.spec, a.allow_cost_inversion)
    p, used = _solve(spec, a.method, a.tol, a.max_starts)
    _emit(
        {
            "method": used,
            "params": p.to_dict(),
            "pasting_residual_max": system_residual(p, spec).max_abs,
            "spec": spec.to_dict(),
        },
        a.out,
    )
    return 0


def cmd_verify(a) -> int:
    spec = _load_spec(a.spec, a.allow_cost_inversion)
    p = _load_params(a.params)
    rep = verify_candidate(p, spec, n_grid=a.grid, width=a.width, tol=a.tol)
    _emit(rep.to_dict(), a.out)
    return 0 if rep.passed else EXIT_CERT


def cmd_simulate(a) -> int:
    spec = _load_spec(a.spec, a.allow_cost_inversion)
    p = _load_params(a.params)
    if not a.force:
        rep = verify_candidate(p, spec)
        if not rep.passed:
            raise CliError(EXIT_CERT, "certification", "parameters are not certified; pass --force to simulate anyway", checks=rep.checks)
    s1, s2 = strategies_from_params(p)
    horizon = a.horizon
    if horizon is None:
        horizon, _ = select_horizon(spec, s1, s2, a.eps)
    try:
        cfg = SimConfig(a.x0, a.dt, horizon, a.paths, a.seed, a.bridge)
        est = simulate_paths(spec, s1, s2, cfg, backend=a.backend)
    except SimulationError as e:
        raise CliError(EXIT_NONFINITE, "non-finite", str(e), diagnostics=e.diagnostics) from e
    except (ValueError, StrategyError) as e:
        raise CliError(EXIT_INPUT, "validation", str(e)) from e
    V1, V2 = value_functions(spec, p)
    v = (V1(a.x0), V2(a.x0))
    res = est.to_dict()
    res["value_functions"] = {"V1": v[0], "V2": v[1]}
    res["abs_error"] = {"player1": abs(est.j1_mean - v[0]), "player2": abs(est.j2_mean - v[1])}
    if a.trace:
        tr = simulate_trace(spec, s1, s2, a.x0, a.dt, horizon, a.seed, 0)
        write_trace_csv(tr, a.trace)
    _emit(res, a.out)
    for i, (j, se) in enumerate(((est.j1_mean, est.j1_se), (est.j2_mean, est.j2_se)), start=1):
        se_txt = "insufficient" if math.isnan(se) else _fmt(se)
        print(f"player {i}: J={_fmt(j)} se={se_txt} V={_fmt(v[i - 1])} |J-V|={_fmt(abs(j - v[i - 1]))}", file=sys.stderr)
    return 0


def _parse_xgrid(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(",")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError as e:
        raise CliError(EXIT_INPUT, "validation", f"--x-grid must be lo,hi,n: {e}") from e


def cmd_sweep(a) -> int:
    spec = _load_spec(a.spec, a.allow_cost_inversion)
    if a.param != "c":
        raise CliError(EXIT_INPUT, "validation", f"unsupported sweep parameter {a.param!r}; only 'c'")
    if not (a.points >= 2 and a.start < a.stop):
        raise CliError(EXIT_INPUT, "validation", "need --from < --to and --points >= 2")
    lower = max(spec.c_tilde, 0.0)
    if not a.start > lower or not math.isfinite(a.stop):
        raise CliError(EXIT_INPUT, "validation", f"sweep range must lie inside ({lower}, inf)")
    grid = np.geomspace(a.start, a.stop, a.points) if a.log else np.linspace(a.start, a.stop, a.points)
    xs = _parse_xgrid(a.x_grid) if a.values else None

    header = ["c", "xbar1", "xbar2", "xstar1", "xstar2"]
    if a.coeffs:
        header += ["a11", "a12", "a21", "a22"]
    if xs is not None:
        header += [f"V{i}@{_fmt(x)}" for i in (1, 2) for x in xs]

    rows = []
    guess = "auto"
    for c in grid:
        try:
            sc = validate_spec(spec.replace(c=float(c)), allow_cost_inversion=a.allow_cost_inversion)
        except SpecError as e:
            raise CliError(EXIT_INPUT, "validation", f"c={c}: {e}", constraint=e.constraint) from e
        p, _ = _solve(sc, a.method, a.tol, a.max_starts, guess)
        if not is_symmetric_linear(sc):
            guess = p  # continuation along the sweep
        row = [c, p.xbar1, p.xbar2, p.xstar1, p.xstar2]
        if a.coeffs:
            row += [p.a11, p.a12, p.a21, p.a22]
        if xs is not None:
            V1, V2 = value_functions(sc, p)
            row += list(V1(xs)) + list(V2(xs))
        rows.append(row)

    fh = open(a.out, "w", newline="", encoding="utf-8") if a.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(float(v)) for v in r])
    finally:
        if a.out:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impulse-game", description="Nash equilibria of two-player impulse games on the line.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("spec", help=f"spec JSON path, or a bundled name: {', '.join(BUNDLED)}")
        p.add_argument("--allow-cost-inversion", action="store_true", help="accept c < c_tilde or lambda < lambda_tilde")
        p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("solve", help="compute the equilibrium 8-tuple")
    common(p)
    p.add_argument("--method", choices=("auto", "closed", "numeric"), default="auto")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-starts", type=int, default=64)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="certify a candidate on a grid")
    common(p)
    p.add_argument("params", help="params JSON (output of solve)")
    p.add_argument("--grid", type=int, default=4001)
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="Monte Carlo payoffs under the threshold strategies")
    common(p)
    p.add_argument("params")
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=float, default=None, help="default: truncation rule with --eps")
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--bridge", action="store_true", help="Brownian-bridge barrier correction")
    p.add_argument("--force", action="store_true", help="skip certification")
    p.add_argument("--backend", choices=("numba", "numpy"), default=None)
    p.add_argument("--trace", help="write the event trace of path 0 to this CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="thresholds and targets over a cost grid (CSV)")
    common(p)
    p.add_argument("--param", default="c")
    p.add_argument("--from", dest="start", type=float, required=True)
    p.add_argument("--to", dest="stop", type=float, required=True)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--log", action="store_true", help="geometric spacing")
    p.add_argument("--method", choices=("auto", "closed", "numeric"), default="auto")
    p.add_argument("--coeffs", action="store_true", help="add a11..a22 columns")
    p.add_argument("--values", action="store_true", help="add V1, V2 columns on --x-grid")
    p.add_argument("--x-grid", default="-5,5,11")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-starts", type=int, default=64)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(json.dumps({"error": e.kind, "message": str(e), **e.extra}, default=str), file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
