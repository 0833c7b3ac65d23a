#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Both implementations execute the same IEEE-754 double op sequence, so the
comparison is purely about dispatch/loop overhead. Run:

    python benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from ptqkit import kernels


def _time(fn, *args, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if kernels.BACKEND != "c":
        print("compiled backend not available; benchmarking the fallback only")

    rng = np.random.default_rng(0)
    cases = []

    for rows, groups in ((4096, 64), (65536, 64), (262144, 16)):
        x = rng.normal(0, 3, size=(rows, groups))
        d = rng.uniform(0.01, 0.2, size=groups)
        z = rng.integers(0, 64, size=groups).astype(np.int32)
        cases.append((f"fake_quant {rows}x{groups}",
                      (kernels.py_fake_quant_grouped, x, d, z, 63),
                      (kernels.fake_quant_grouped, x, d, z, 63)))

    for r, k, c in ((128, 128, 128), (512, 256, 128), (1024, 512, 64)):
        a = rng.normal(size=(r, k)).astype(np.float32)
        b = rng.normal(size=(k, c)).astype(np.float32)
        cases.append((f"matmul {r}x{k}x{c}",
                      (kernels.py_matmul_f32, a, b),
                      (kernels.matmul_f32, a, b)))

    print(f"{'kernel':24s} {'python':>10s} {'active (' + kernels.BACKEND + ')':>14s} {'speedup':>8s}")
    for name, (py_fn, *py_args), (fn, *fn_args) in cases:
        t_py = _time(py_fn, *py_args, repeats=args.repeats)
        t_c = _time(fn, *fn_args, repeats=args.repeats)
        print(f"{name:24s} {t_py * 1e3:9.2f}ms {t_c * 1e3:13.2f}ms {t_py / t_c:7.2f}x")

    # parity spot check: identical bits regardless of backend
    x = rng.normal(0, 3, size=(1000, 8))
    d = rng.uniform(0.01, 0.2, size=8)
    z = rng.integers(0, 64, size=8).astype(np.int32)
    same = np.array_equal(
        kernels.fake_quant_grouped(x, d, z, 63).view(np.uint32),
        kernels.py_fake_quant_grouped(x, d, z, 63).view(np.uint32),
    )
    print(f"bit-identical outputs: {same}")


if __name__ == "__main__":
    main()
