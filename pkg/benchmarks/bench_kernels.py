"""Compare the compiled and numpy kernel backends.

Times pair-derivative evaluation for both built-in kernels and the dense
block scatter used by Delta assembly, and checks that both backends agree.

Usage::

    python3 benchmarks/bench_kernels.py [--pairs 200000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from cvpbench import _kernels_py

try:
    from cvpbench import _ckernels
except ImportError:
    _ckernels = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _cases(rng, n_pairs):
    X = rng.uniform(-3, 3, (n_pairs, 2))
    Y = rng.uniform(-3, 3, (n_pairs, 2))
    n, d = 400, 3
    I = rng.integers(0, n, n_pairs).astype(np.int64)
    J = rng.integers(0, n, n_pairs).astype(np.int64)
    coef = rng.standard_normal(n_pairs)
    B = rng.standard_normal((n_pairs, d, d))
    return {
        "gaussian_pair_derivs": lambda m: m.gaussian_pair_derivs(X, Y, 4.5),
        "lattice_pair_derivs": lambda m: m.lattice_pair_derivs(X, Y, 1.0, 1.7, 1.3, 0.0, 0.2),
        "scatter_blocks": lambda m: _scatter(m, n, d, I, J, coef, B),
    }


def _scatter(m, n, d, I, J, coef, B):
    out = np.zeros((n * d, n * d))
    m.scatter_blocks(out, I, J, coef, B)
    return (out,)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cases = _cases(np.random.default_rng(args.seed), args.pairs)
    print(f"{'kernel':24s} {'numpy [s]':>10s} {'cython [s]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases.items():
        t_py = _best(lambda: fn(_kernels_py), args.repeat)
        if _ckernels is None:
            print(f"{name:24s} {t_py:10.4f} {'n/a':>11s}")
            continue
        t_c = _best(lambda: fn(_ckernels), args.repeat)
        diff = max(float(np.abs(np.asarray(a) - np.asarray(b)).max())
                   for a, b in zip(fn(_kernels_py), fn(_ckernels)))
        print(f"{name:24s} {t_py:10.4f} {t_c:11.4f} {t_py / t_c:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
