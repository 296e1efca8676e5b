#!/usr/bin/env python3
"""Benchmark the numba and numpy convolution backends on the model's layer shapes.

Runs every conv/deconv forward and backward that occurs in a training step
(batch 128 by default), checks the two backends agree numerically, and prints
a per-layer and per-step comparison table.

Usage: python benchmarks/bench_kernels.py [--batch 128] [--repeat 20]
"""

import argparse
import time

import numpy as np

from chansr import kernels

# (label, input shape sans batch, kernel shape); None stride means conv2d
LAYERS = [
    ("ca_conv1", (2, 15, 6), (16, 2, 3, 3), None),
    ("ca_conv2", (16, 15, 6), (2, 16, 3, 3), None),
    ("sa_conv", (2, 15, 6), (1, 2, 7, 7), None),
    ("fe_conv1", (2, 15, 6), (32, 2, 5, 5), None),
    ("fe_conv2", (32, 15, 6), (16, 32, 1, 1), None),
    ("fe_conv3", (16, 15, 6), (16, 16, 3, 3), None),
    ("fe_conv4", (16, 15, 6), (32, 16, 1, 1), None),
    ("us_deconv", (32, 15, 6), (32, 2, 9, 5), (9, 5)),
]


def _time(fn, repeat):
    fn()  # warm (and JIT-compile on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def bench(batch: int, repeat: int):
    rng = np.random.default_rng(0)
    backends = [kernels.numpy_backend]
    if kernels.numba_backend is not None:
        backends.insert(0, kernels.numba_backend)
    names = [b.name for b in backends]
    print(f"batch {batch}, repeat {repeat}, backends: {', '.join(names)}")
    header = f"{'layer':<12} {'dir':<4}" + "".join(f" {n + ' (ms)':>12}" for n in names)
    print(header)
    print("-" * len(header))
    totals = {n: 0.0 for n in names}
    for label, xs, ws, stride in LAYERS:
        x = rng.standard_normal((batch,) + xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        n_out = ws[1] if stride else ws[0]
        b = rng.standard_normal(n_out).astype(np.float32)
        if stride:
            fwd = [lambda bk=bk: bk.deconv2d_forward(x, w, b, stride) for bk in backends]
        else:
            fwd = [lambda bk=bk: bk.conv2d_forward(x, w, b) for bk in backends]
        outs = [f() for f in fwd]
        if len(outs) == 2:
            scale = max(1.0, float(np.abs(outs[1]).max()))
            err = np.abs(outs[0] - outs[1]).max() / scale
            assert err < 1e-4, f"{label}: backends disagree (rel {err:.2e})"
        dy = rng.standard_normal(outs[0].shape).astype(np.float32)
        if stride:
            bwd = [lambda bk=bk: bk.deconv2d_backward(x, w, dy, stride) for bk in backends]
        else:
            bwd = [lambda bk=bk: bk.conv2d_backward(x, w, dy) for bk in backends]
        for direction, fns in (("fwd", fwd), ("bwd", bwd)):
            times = [_time(fn, repeat) for fn in fns]
            for n, t in zip(names, times):
                totals[n] += t
            row = f"{label:<12} {direction:<4}" + "".join(f" {t:>12.2f}" for t in times)
            print(row)
    print("-" * len(header))
    print(f"{'per step':<17}" + "".join(f" {totals[n]:>12.2f}" for n in names))
    if len(names) == 2:
        ratio = totals[names[0]] / totals[names[1]]
        faster = names[1] if ratio > 1 else names[0]
        print(f"\n{names[0]}/{names[1]} time ratio: {ratio:.2f} (faster here: {faster})")
    print("note: the numba path parallelizes across cores; rankings depend on "
          "core count and BLAS build. Select with CHANSR_BACKEND={auto,numba,numpy}.")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    bench(args.batch, args.repeat)
