"""Time the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--n 2048] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from sparse_ilc import _fallback, kernels

try:
    from sparse_ilc import _kernels
except ImportError:
    _kernels = None


def cases(n, rng):
    x = rng.normal(size=n)
    b, a = np.array([0.02, 0.03, 0.01]), np.array([1.0, -1.6, 0.66])
    return {
        "lfilter_zi0": lambda impl: kernels.lfilter_zi0(b, a, x, impl=impl),
        "soft_threshold": lambda impl: kernels.soft_threshold(x, 0.5, impl=impl),
        "diff_apply": lambda impl: kernels.diff_apply(x, impl=impl),
        "diff_adjoint": lambda impl: kernels.diff_adjoint(x[:-1], impl=impl),
        "count_nonzero_diffs": lambda impl: kernels.count_nonzero_diffs(np.round(x, 1), 0.0, impl=impl),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2048)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print("active backend: %s, N = %d" % (kernels.BACKEND, args.n))
    print("%-22s %14s %14s %9s" % ("kernel", "python [us]", "cython [us]", "speedup"))
    for name, fn in cases(args.n, rng).items():
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e6
        if _kernels is None:
            print("%-22s %14.1f %14s %9s" % (name, t_py, "n/a", "n/a"))
            continue
        np.testing.assert_allclose(fn(_kernels), fn(_fallback), rtol=1e-12, atol=1e-15)
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e6
        print("%-22s %14.1f %14.1f %8.1fx" % (name, t_py, t_cy, t_py / t_cy))


if __name__ == "__main__":
    main()
