"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best-of-``repeat`` wall time per call and the speedup
of the compiled extension. A missing extension is reported and skipped.
"""
import argparse
import timeit

import numpy as np

from bocl import _pykernels

try:
    from bocl import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    x = rng.uniform(0, 1, (40, 2))
    z = rng.uniform(0, 1, (512, 2))
    ls, var = np.array([0.3, 0.6]), 1.2
    k = _pykernels.matern52_cross(x, x, ls, var) + 1e-4 * np.eye(len(x))
    lower = np.linalg.cholesky(k)
    alpha = rng.standard_normal(len(x))
    img = rng.standard_normal((32, 8, 12, 12))
    cols = _pykernels.im2col(img, 3, 1)
    return {
        "matern52_cross 512x40": lambda m: m.matern52_cross(z, x, ls, var),
        "matern52_gram_grad 40": lambda m: m.matern52_gram_grad(x, ls, var),
        "matern52_predict_grad": lambda m: m.matern52_predict_grad(z[0], x, ls, var, alpha, lower),
        "im2col 32x8x12x12 k3": lambda m: m.im2col(img, 3, 1),
        "col2im 32x8x12x12 k3": lambda m: m.col2im(cols, img.shape, 3, 1),
    }


def best_time(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy (us)':>12}{'cython (us)':>13}{'speedup':>9}")
    for name, call in cases(rng).items():
        py = best_time(lambda: call(_pykernels), args.repeat) * 1e6
        if _ckernels is None:
            print(f"{name:<26}{py:>12.1f}{'n/a':>13}{'':>9}")
            continue
        cy = best_time(lambda: call(_ckernels), args.repeat) * 1e6
        print(f"{name:<26}{py:>12.1f}{cy:>13.1f}{py / cy:>8.1f}x")


if __name__ == "__main__":
    main()
