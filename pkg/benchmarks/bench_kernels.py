"""Time the compiled and pure-numpy kernels against each other.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-``repeat`` wall time per call for each backend and the
speedup, after checking both backends return the same numbers.
"""

import argparse
import timeit

import numpy as np

from flowlps import _kernels


def cases(rng):
    d = 64
    b = rng.standard_normal((d, d))
    h = b @ b.T / d + np.eye(d)
    yield ("ula_chain d=64 n=2000", "ula_chain",
           (rng.standard_normal(d), h, rng.standard_normal(d), 1e-3,
            rng.standard_normal((2000, d)), True))
    yield ("ula_chain d=8 n=100000", "ula_chain",
           (rng.standard_normal(8), h[:8, :8], rng.standard_normal(8), 1e-3,
            rng.standard_normal((100_000, 8)), True))
    img = rng.standard_normal((64, 64))
    ker = rng.standard_normal((7, 7))
    yield ("circular_conv 64x64 k=7", "circular_conv", (img, ker, False))
    yield ("circular_conv adjoint 64x64 k=7", "circular_conv", (img, ker, True))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if "numba" not in _kernels.available_backends():
        print("numba is not installed; nothing to compare")
        return 0
    rng = np.random.default_rng(0)
    print(f"{'case':<34}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for label, name, case_args in cases(rng):
        fns = {impl.name: getattr(impl, name) for impl in (_kernels.numpy_impl, _kernels.numba_impl)}
        ref, got = fns["numpy"](*case_args), fns["numba"](*case_args)  # also warms up the JIT
        np.testing.assert_allclose(got, ref, rtol=1e-10, atol=1e-10)
        best = {}
        for key, fn in fns.items():
            number = 3
            best[key] = min(timeit.repeat(lambda: fn(*case_args), number=number,
                                          repeat=args.repeat)) / number
        print(f"{label:<34}{best['numpy'] * 1e3:>12.3f}{best['numba'] * 1e3:>12.3f}"
              f"{best['numpy'] / best['numba']:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
