"""Compare the compiled and pure-Python survival counting kernels.

    python benchmarks/bench_kernels.py [--n 2000 20000] [--repeat 5]

Both backends are called on the same inputs; outputs are checked for
equality before timing.
"""

import argparse
import timeit

import numpy as np

from synthtrial._kernels import BACKENDS


def inputs(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    # rounded times give realistic tie groups
    times = np.round(rng.exponential(1.0, n), 2) + 0.01
    events = rng.integers(0, 2, n).astype(np.int64)
    group = rng.integers(0, 2, n).astype(np.int64)
    risk = rng.normal(size=n)
    return times, events, group, risk


def calls(mod, times, events, group, risk):
    return {
        "km_counts": lambda: mod.km_counts(times, events),
        "logrank_counts": lambda: mod.logrank_counts(times, events, group),
        "concordance_counts": lambda: mod.concordance_counts(risk, times, events),
    }


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return bool(np.allclose(a, b, rtol=1e-12, atol=1e-12))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[1000, 10000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if "compiled" not in BACKENDS:
        print("compiled extension not built; only the python backend is available")
    print(f"{'kernel':<20}{'n':>8}" + "".join(f"{name:>14}" for name in BACKENDS) + f"{'speedup':>10}")
    for n in args.n:
        data = inputs(n)
        fns = {name: calls(mod, *data) for name, mod in BACKENDS.items()}
        for kernel in fns["python"]:
            results = {name: fns[name][kernel]() for name in fns}
            if "compiled" in results and not same(results["python"], results["compiled"]):
                raise SystemExit(f"{kernel}: backends disagree at n={n}")
            best = {}
            for name in fns:
                reps = max(1, int(0.2 / max(timeit.timeit(fns[name][kernel], number=1), 1e-6)))
                best[name] = min(timeit.repeat(fns[name][kernel], number=reps, repeat=args.repeat)) / reps
            row = f"{kernel:<20}{n:>8}" + "".join(f"{best[name] * 1e3:>12.3f}ms" for name in fns)
            speed = best["python"] / best["compiled"] if "compiled" in best else float("nan")
            print(row + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
