#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Times the three hot kernels (RFF feature map, batched set-encoder forward,
batched backward) at a few realistic problem sizes and prints a table with
the speedup of the compiled core. Run after an editable install:

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from covaset import backend


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rff(kernels, m, n, d, repeats):
    rng = np.random.default_rng(0)
    A = rng.normal(size=(m, n))
    P = rng.normal(size=(n, d // 2))
    kernels.rff_map(A, P)  # warm up
    return time_call(lambda: kernels.rff_map(A, P), repeats)


def make_net(rng, n, widths, embed):
    sizes = [n, *widths]
    ws = [rng.normal(size=(sizes[i], sizes[i + 1])) for i in range(len(widths))]
    bs = [rng.normal(size=w) for w in widths]
    hw = rng.normal(size=(widths[-1], embed))
    hb = rng.normal(size=embed)
    ow = rng.normal(size=embed)
    return ws, bs, hw, hb, ow, 0.1


def bench_forward(kernels, B, s, n, widths, embed, repeats):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(B, s, n))
    net = make_net(rng, n, widths, embed)
    kernels.forward_batch(X, *net)
    return time_call(lambda: kernels.forward_batch(X, *net), repeats)


def bench_backward(kernels, B, s, n, widths, embed, repeats):
    rng = np.random.default_rng(2)
    X = rng.normal(size=(B, s, n))
    net = make_net(rng, n, widths, embed)
    trace = kernels.forward_batch(X, *net)[2]
    dlogit = rng.normal(size=B)
    dembed = rng.normal(size=(B, embed))
    kernels.backward_batch(X, *net, trace, dlogit, dembed)
    return time_call(
        lambda: kernels.backward_batch(X, *net, trace, dlogit, dembed), repeats
    )


CASES = [
    ("rff  m=500 n=10 d=256", lambda k, r: bench_rff(k, 500, 10, 256, r)),
    ("rff  m=500 n=36 d=2048", lambda k, r: bench_rff(k, 500, 36, 2048, r)),
    ("fwd  B=64 s=64 n=10 w=32x32", lambda k, r: bench_forward(k, 64, 64, 10, (32, 32), 16, r)),
    ("fwd  B=200 s=200 n=36 w=64x64", lambda k, r: bench_forward(k, 200, 200, 36, (64, 64), 32, r)),
    ("bwd  B=64 s=64 n=10 w=32x32", lambda k, r: bench_backward(k, 64, 64, 10, (32, 32), 16, r)),
    ("bwd  B=200 s=200 n=36 w=64x64", lambda k, r: bench_backward(k, 200, 200, 36, (64, 64), 32, r)),
]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    names = backend.available()
    if "compiled" not in names:
        print("compiled core not built; only the numpy fallback is available")
    kernels = {name: backend._BACKENDS[name] for name in names}

    print(f"{'case':34s}" + "".join(f"{n:>12s}" for n in names) + f"{'speedup':>10s}")
    for label, fn in CASES:
        times = {n: fn(kernels[n], args.repeats) for n in names}
        row = f"{label:34s}" + "".join(f"{times[n] * 1e3:10.2f}ms" for n in names)
        if "compiled" in times and "python" in times:
            row += f"{times['python'] / times['compiled']:9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
