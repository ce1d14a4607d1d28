"""Time the compiled and pure-Python episode kernels on the default catalog.

    python benchmarks/bench_backends.py --horizon 5000 --repeats 3

Both backends run the same seeds, so the script also checks that their
traces agree before reporting timings.
"""
import argparse
import time
import warnings

import numpy as np

from cachebandit.backend import available_backends
from cachebandit.catalog import default_catalog, uniform_users_profile
from cachebandit.policies import PolicySpec
from cachebandit.simulator import run_episode

DEFAULT_KINDS = ("cucb", "cucbsc-L", "cucbsc-sqrt", "mcucbsc-L", "delta-eps-greedy", "delta-myopic", "iub")


def time_episode(catalog, profile, spec, horizon, seed, backend):
    start = time.perf_counter()
    trace = run_episode(catalog, profile, spec, horizon, seed=seed, backend=backend)
    return time.perf_counter() - start, trace


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--horizon", type=int, default=5000)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--policies", default=",".join(DEFAULT_KINDS))
    args = parser.parse_args(argv)

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled kernel not built; only the Python backend is available")
    catalog = default_catalog()
    profile = uniform_users_profile(catalog, 0.56)
    warnings.filterwarnings("ignore", message="gamma=.*below")

    header = f"{'policy':<26}" + "".join(f"{b + ' [s]':>14}" for b in backends) + (f"{'speedup':>10}" if len(backends) == 2 else "")
    print(f"F={catalog.num_files} M={catalog.capacity} U={catalog.max_users} N={args.horizon} repeats={args.repeats}")
    print(header)
    for kind in args.policies.split(","):
        spec = PolicySpec(kind.strip())
        best = {}
        traces = {}
        for backend in backends:
            times = []
            for r in range(args.repeats):
                dt, trace = time_episode(catalog, profile, spec, args.horizon, r, backend)
                times.append(dt)
                traces.setdefault(backend, trace)
            best[backend] = min(times)
        if len(traces) == 2:
            a, b = traces["compiled"], traces["python"]
            if not (np.array_equal(a.reward, b.reward) and a.change_sets == b.change_sets):
                raise SystemExit(f"{spec.label}: backends disagree")
        row = f"{spec.label:<26}" + "".join(f"{best[b]:>14.3f}" for b in backends)
        if len(best) == 2:
            row += f"{best['python'] / best['compiled']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
