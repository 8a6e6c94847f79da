"""Time the path simulator on the numba and numpy backends.

    python3 benchmarks/bench_simulator.py --paths 2000 --horizon 100

Both backends run the same Problem 1 workload (equilibrium strategies, three
starting points, common random numbers) and the outputs are compared. The
numba timing excludes compilation (a warm-up call runs first).
"""

import argparse
import time

import numpy as np

from impulse_game._accel import HAVE_NUMBA
from impulse_game.model import bundled_spec, strategies_from_params
from impulse_game.simulate import run_paths
from impulse_game.symmetric import closed_form_equilibrium


def workload(args):
    spec = bundled_spec("problem1")
    p, _ = closed_form_equilibrium(spec)
    s1, s2 = strategies_from_params(p)
    configs = [(x, s1, s2) for x in (p.xbar1, 0.0, p.xbar2)]
    return spec, configs


def timed(spec, configs, args, backend):
    kw = dict(dt=args.dt, horizon=args.horizon, n_paths=args.paths, seed=args.seed, bridge=args.bridge, backend=backend)
    if backend == "numba":
        run_paths(spec, configs, dt=args.dt, horizon=10 * args.dt, n_paths=2, backend="numba")
    t0 = time.perf_counter()
    res = run_paths(spec, configs, **kw)
    return time.perf_counter() - t0, res


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--horizon", type=float, default=100.0)
    ap.add_argument("--dt", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--bridge", action="store_true")
    args = ap.parse_args()

    spec, configs = workload(args)
    steps = args.paths * int(round(args.horizon / args.dt)) * len(configs)
    backends = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]
    results = {}
    print(f"{'backend':8s} {'seconds':>9s} {'ns/step':>9s}")
    for b in backends:
        secs, res = timed(spec, configs, args, b)
        results[b] = res
        print(f"{b:8s} {secs:9.3f} {1e9 * secs / steps:9.1f}")
    if len(results) == 2:
        a, b = results["numba"].data, results["numpy"].data
        same = a == b  # also covers matching inf first-impulse times
        diff = float(np.max(np.abs(a[~same] - b[~same]))) if not same.all() else 0.0
        print(f"max |numba - numpy| over all outputs: {diff:.3g}")


if __name__ == "__main__":
    main()
