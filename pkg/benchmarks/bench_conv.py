"""Benchmark the compiled convolution kernel against the numpy fallback.

Usage: python benchmarks/bench_conv.py [--repeats N]

Times conv2d_forward and conv2d_backward on a few representative shapes and
verifies the two backends agree to near machine precision.
"""

import argparse
import importlib
import time

import numpy as np

from sagvit.kernels import _conv_numpy

try:
    from sagvit.kernels import _conv_ext
except ImportError:
    _conv_ext = None

SHAPES = [
    # (C_in, H, W, C_out, k, stride, padding)
    (3, 32, 32, 16, 3, 2, 1),
    (16, 16, 16, 32, 3, 2, 1),
    (32, 8, 8, 64, 3, 1, 1),
    (64, 8, 8, 64, 1, 1, 0),
]


def bench(fn, args, repeats):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    if _conv_ext is None:
        print("compiled extension not available; benchmarking numpy backend only")

    rng = np.random.default_rng(0)
    header = f"{'shape':<34} {'dir':<8} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for cin, h, w, cout, k, stride, pad in SHAPES:
        x = rng.normal(size=(cin, h, w))
        weight = rng.normal(size=(cout, cin, k, k))
        label = f"{cin}x{h}x{w} -> {cout}, k={k}, s={stride}"

        out_np = _conv_numpy.conv2d_forward(x, weight, stride, pad)
        gout = rng.normal(size=out_np.shape)
        t_np_f = bench(_conv_numpy.conv2d_forward, (x, weight, stride, pad), args.repeats)
        t_np_b = bench(_conv_numpy.conv2d_backward, (x, weight, stride, pad, gout),
                       args.repeats)

        if _conv_ext is not None:
            out_cy = _conv_ext.conv2d_forward(x, weight, stride, pad)
            assert np.max(np.abs(out_cy - out_np)) < 1e-12, "backend outputs diverge"
            gx_np, gw_np = _conv_numpy.conv2d_backward(x, weight, stride, pad, gout)
            gx_cy, gw_cy = _conv_ext.conv2d_backward(x, weight, stride, pad, gout)
            assert np.max(np.abs(gx_cy - gx_np)) < 1e-12
            assert np.max(np.abs(gw_cy - gw_np)) < 1e-12
            t_cy_f = bench(_conv_ext.conv2d_forward, (x, weight, stride, pad),
                           args.repeats)
            t_cy_b = bench(_conv_ext.conv2d_backward, (x, weight, stride, pad, gout),
                           args.repeats)
            print(f"{label:<34} {'fwd':<8} {t_np_f * 1e3:>10.3f} {t_cy_f * 1e3:>10.3f} "
                  f"{t_np_f / t_cy_f:>7.2f}x")
            print(f"{label:<34} {'bwd':<8} {t_np_b * 1e3:>10.3f} {t_cy_b * 1e3:>10.3f} "
                  f"{t_np_b / t_cy_b:>7.2f}x")
        else:
            print(f"{label:<34} {'fwd':<8} {t_np_f * 1e3:>10.3f} {'-':>10} {'-':>8}")
            print(f"{label:<34} {'bwd':<8} {t_np_b * 1e3:>10.3f} {'-':>10} {'-':>8}")

    from sagvit import kernels
    print(f"\nactive backend at import: {kernels.BACKEND}")


if __name__ == "__main__":
    main()
