"""Compare the compiled and numpy kernel backends on the cleaning oracles.

    python benchmarks/bench_kernels.py [--n 500] [--d 10] [--batch 256] [--repeat 2000]
"""
import argparse
import importlib
import timeit

import numpy as np

from bilevelkit import _pykernels


def make_args(n, d, batch, seed=0):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, d))
    y = (r.random(n) < 0.5).astype(float)
    w = r.random(n)
    omega = r.standard_normal(d)
    v = r.standard_normal(d)
    idx = None if batch >= n else np.sort(r.choice(n, batch, replace=False))
    return {
        "wlogistic_value": (X, y, w, idx, omega),
        "wlogistic_grad": (X, y, w, idx, omega),
        "wlogistic_hvp": (X, w, idx, omega, v),
        "logistic_cross": (X, y, w, idx, omega, v),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--d", type=int, default=10)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args(argv)

    backends = {"python": _pykernels}
    try:
        backends["cython"] = importlib.import_module("bilevelkit._ckernels")
    except ImportError:
        print("compiled kernels not built; timing the numpy backend only")

    calls = make_args(args.n, args.d, args.batch)
    print(f"n={args.n} d={args.d} batch={args.batch} repeat={args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{b:>14}" for b in backends) + "   speedup")
    for name, a in calls.items():
        times = {}
        for b, mod in backends.items():
            fn = getattr(mod, name)
            times[b] = min(timeit.repeat(lambda: fn(*a), number=args.repeat, repeat=3)) / args.repeat
        row = f"{name:<18}" + "".join(f"{times[b] * 1e6:>11.2f} us" for b in backends)
        if "cython" in times:
            row += f"   {times['python'] / times['cython']:.2f}x"
        print(row)


if __name__ == "__main__":
    main()
