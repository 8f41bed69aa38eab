"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from disbench import kernels


def cases(rng):
    a = rng.integers(0, 20, 100_000)
    b = rng.integers(0, 8, 100_000)
    values = np.sort(rng.normal(size=10_000))
    targets = rng.normal(size=10_000)
    x = np.sort(rng.normal(size=50_000))
    y = np.sort(rng.normal(0.05, 1.0, size=50_000))
    return {
        "contingency 100k": lambda k: k.contingency(a, b, 20, 8),
        "best_split 10k": lambda k: k.best_split(values, targets, 1),
        "ks_statistic 2x50k": lambda k: k.ks_statistic(x, y),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=20)
    args = parser.parse_args()
    names = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(names) == 1:
        print("compiled kernels not built; timing the fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}" + "".join(f"{n:>12}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for label, fn in cases(rng).items():
        times = []
        for name in names:
            impl = kernels.backend(name)
            t = min(timeit.repeat(lambda: fn(impl), repeat=args.repeat, number=args.number))
            times.append(t / args.number)
        row = f"{label:<22}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
