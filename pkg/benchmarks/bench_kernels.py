"""Time the compiled convolution kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--grid 127] [--batch 4] [--channels 8]
"""
import argparse
import timeit

import numpy as np

from mgsolve import _backend, _pykernels


def cases(batch, channels, grid, rng):
    x = rng.standard_normal((batch, channels, grid, grid))
    k = rng.standard_normal((channels, channels, 3, 3))
    coarse = rng.standard_normal((batch, channels, (grid - 1) // 2, (grid - 1) // 2))
    return {
        "conv_s1": lambda m: m.conv_s1(x, k),
        "conv_s2": lambda m: m.conv_s2(x, k),
        "tconv_s2": lambda m: m.tconv_s2(coarse, k),
        "conv_s1_wgrad": lambda m: m.conv_s1_wgrad(x, x),
        "conv_s2_wgrad": lambda m: m.conv_s2_wgrad(x, coarse),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=127)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--channels", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if "compiled" not in _backend.available():
        raise SystemExit("compiled kernels are not built; run pip install -e . first")
    compiled = _backend._BACKENDS["compiled"]
    rng = np.random.default_rng(0)
    print(f"{'kernel':<15} {'numpy ms':>10} {'compiled ms':>12} {'speedup':>8} {'max rel diff':>13}")
    for name, fn in cases(args.batch, args.channels, args.grid, rng).items():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat))
        ref, got = fn(_pykernels), fn(compiled)
        diff = np.abs(ref - got).max() / np.abs(ref).max()
        print(f"{name:<15} {1e3 * t_py:>10.2f} {1e3 * t_c:>12.2f} {t_py / t_c:>8.2f} {diff:>13.1e}")


if __name__ == "__main__":
    main()
