"""Time the compiled row kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--rows 4096] [--cols 64] [--repeat 20]

Also checks that both backends agree to 1e-12 on every input.
"""
import argparse
import timeit

import numpy as np

from talc.numerics import _kernels_py

try:
    from talc.numerics import _kernels
except ImportError:      # extension not built
    _kernels = None


def cases(rows, cols, rng):
    x = np.ascontiguousarray(rng.standard_normal((rows, cols)))
    gy = np.ascontiguousarray(rng.standard_normal((rows, cols)))
    mask = np.ascontiguousarray(rng.random((rows, cols)) > 0.3)
    gamma, beta = rng.standard_normal(cols), rng.standard_normal(cols)
    y = _kernels_py.softmax_fwd(x)
    _, xhat, rstd = _kernels_py.layernorm_fwd(x, gamma, beta, 1e-5)
    _, sig = _kernels_py.silu_fwd(x)
    return {
        "softmax_fwd": lambda k: k.softmax_fwd(x),
        "softmax_fwd_masked": lambda k: k.softmax_fwd(x, mask),
        "softmax_bwd": lambda k: k.softmax_bwd(y, gy),
        "layernorm_fwd": lambda k: k.layernorm_fwd(x, gamma, beta, 1e-5),
        "layernorm_bwd": lambda k: k.layernorm_bwd(gy, xhat, rstd, gamma),
        "silu_fwd": lambda k: k.silu_fwd(x),
        "silu_bwd": lambda k: k.silu_bwd(x, sig, gy),
    }


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(u, v) for u, v in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=4096)
    ap.add_argument("--cols", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; build with pip install -e .")
        return 1
    rng = np.random.default_rng(0)
    print(f"rows={args.rows} cols={args.cols} repeat={args.repeat} (best of 3, ms per call)")
    print(f"{'kernel':<20}{'python':>10}{'compiled':>10}{'speedup':>9}{'max|diff|':>12}")
    for name, call in cases(args.rows, args.cols, rng).items():
        diff = max_diff(call(_kernels_py), call(_kernels))
        t_py = min(timeit.repeat(lambda: call(_kernels_py), number=args.repeat, repeat=3)) / args.repeat
        t_c = min(timeit.repeat(lambda: call(_kernels), number=args.repeat, repeat=3)) / args.repeat
        print(f"{name:<20}{t_py * 1e3:>10.3f}{t_c * 1e3:>10.3f}{t_py / t_c:>8.2f}x{diff:>12.1e}")
        if diff > 1e-12:
            print(f"  backends disagree on {name}")
            return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
