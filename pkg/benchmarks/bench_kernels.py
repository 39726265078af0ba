"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Also checks that both backends return identical results on every input.
"""

import argparse
import time

import numpy as np

from vaupipe.kernels import BACKENDS
from vaupipe.volatility import gaussian_kernel


def cases(rng):
    assign = []
    for _ in range(300):
        r, c = rng.integers(1, 9, size=2)
        cost = rng.random((r, c))
        allowed = rng.random((r, c)) > 0.2
        assign.append((cost, allowed))
    signals = [rng.random(n) for n in (64, 256, 1024, 4096)]
    return assign, signals


def run(backend, assign, signals):
    out = [backend.solve_assignment(c, a) for c, a in assign]
    w = gaussian_kernel(2.0)
    out += [backend.convolve_reflect(x, w) for x in signals]
    for x in signals:
        out.extend(backend.local_extrema(x))
    return out


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    assign, signals = cases(np.random.default_rng(args.seed))
    results = {name: run(mod, assign, signals) for name, mod in BACKENDS.items()}
    if "cython" in results:
        same = all(np.array_equal(a, b) for a, b in zip(results["python"], results["cython"]))
        print(f"backends agree: {same}")
    else:
        print("compiled backend not built; timing the fallback only")

    timings = {}
    for name, mod in BACKENDS.items():
        timings[name] = {
            "assignment": best_time(lambda: [mod.solve_assignment(c, a) for c, a in assign], args.repeat),
            "smooth": best_time(lambda: [mod.convolve_reflect(x, gaussian_kernel(2.0)) for x in signals], args.repeat),
            "extrema": best_time(lambda: [mod.local_extrema(x) for x in signals], args.repeat),
        }
    print(f"{'kernel':<12}" + "".join(f"{n:>12}" for n in timings) + ("     speedup" if len(timings) > 1 else ""))
    for k in timings["python"]:
        row = f"{k:<12}" + "".join(f"{timings[n][k] * 1e3:>10.2f}ms" for n in timings)
        if "cython" in timings:
            row += f"{timings['python'][k] / timings['cython'][k]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
