#!/usr/bin/env python3
"""Benchmark the compiled convolution core against the NumPy fallback.

Runs the forward and backward batch kernels on shapes spanning the tiny
test instance up to training-batch scale and prints a timing table. Build
the extension first (`python setup.py build_ext --inplace` or
`pip install -e .`); without it only the fallback column is populated.

Usage: python benchmarks/bench_kernels.py [--repeats 50]
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from convd.kernels import _fallback  # noqa: E402

try:
    from convd.kernels import _core
except ImportError:
    _core = None

CASES = [
    # (label, batch, plane, kernel)
    ("tiny eval", 1, (4, 3), (2, 2)),
    ("tiny batch", 32, (4, 3), (2, 2)),
    ("toy batch", 128, (10, 10), (3, 3)),
    ("wide batch", 128, (20, 15), (5, 5)),
    ("deep batch", 512, (10, 10), (3, 3)),
]


def timed(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_case(label, batch, plane, kernel, repeats):
    rng = np.random.default_rng(0)
    planes = rng.normal(size=(batch, *plane))
    kernels = rng.normal(size=(batch, *kernel))
    out_shape = (batch, plane[0] - kernel[0] + 1, plane[1] - kernel[1] + 1)
    grad = rng.normal(size=out_shape)

    rows = []
    for direction, make in (
        ("forward", lambda impl: lambda: impl.conv2d_batch(planes, kernels)),
        ("backward", lambda impl: lambda: impl.conv2d_batch_backward(planes, kernels, grad)),
    ):
        t_py = timed(make(_fallback), repeats)
        if _core is not None:
            t_cy = timed(make(_core), repeats)
            np.testing.assert_allclose(
                make(_fallback)() if direction == "forward" else make(_fallback)()[0],
                make(_core)() if direction == "forward" else make(_core)()[0],
                atol=1e-12,
            )
            speedup = f"{t_py / t_cy:5.2f}x"
            cy_us = f"{t_cy * 1e6:10.1f}"
        else:
            speedup, cy_us = "    -", "         -"
        rows.append((label, direction, f"{t_py * 1e6:10.1f}", cy_us, speedup))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    print(f"compiled core available: {_core is not None}")
    header = f"{'case':<12} {'pass':<9} {'python us':>10} {'cython us':>10} {'speedup':>7}"
    print(header)
    print("-" * len(header))
    for case in CASES:
        for row in run_case(*case, repeats=args.repeats):
            print(f"{row[0]:<12} {row[1]:<9} {row[2]:>10} {row[3]:>10} {row[4]:>7}")


if __name__ == "__main__":
    main()
