"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--n 20000] [--repeat 5]

Prints the best time per call for each kernel and backend, and the speedup.
"""
import argparse
import timeit

import numpy as np

from cpsfalsify import _pykernels

try:
    from cpsfalsify import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(n):
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=n), rng.normal(size=n)
    idx = np.arange(1, n + 1)
    return {
        "window_min[0,50]": lambda m: m.window_min(a, 0, 50),
        "window_max[10,200]": lambda m: m.window_max(a, 10, 200),
        "until[0,50]": lambda m: m.until(a, b, 0, 50),
        "radical_inverse(base 3)": lambda m: m.radical_inverse(idx, 3),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000, help="signal length")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"n={args.n}  backends: {', '.join(name for name, _ in backends)}")
    print(f"{'kernel':26s}" + "".join(f"{name:>12s}" for name, _ in backends) + "   speedup")
    for label, fn in cases(args.n).items():
        best = []
        for _, mod in backends:
            ref = fn(_pykernels)
            assert np.array_equal(fn(mod), ref), f"{label}: backends disagree"
            t = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
            best.append(t)
        speed = f"{best[0] / best[1]:9.1f}x" if len(best) == 2 else ""
        print(f"{label:26s}" + "".join(f"{t * 1e3:10.2f}ms" for t in best) + "  " + speed)


if __name__ == "__main__":
    main()
