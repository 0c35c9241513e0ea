#!/usr/bin/env python3
"""Benchmark the convolution kernel backends against each other.

Times forward and backward passes over a grid of shapes spanning the
stem (few wide channels, long windows) to the last stage (many narrow
channels, short windows), plus one end-to-end training-step timing.

Usage: python benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from dualpath_har.kernels import available_backends, get_backend

SHAPES = [
    # (N, Ci, T, Co, K, stride, padding), roughly stem -> stage 4
    (16, 6, 64, 8, 3, 1, 1),
    (16, 8, 64, 16, 3, 2, 1),
    (16, 16, 32, 32, 3, 2, 1),
    (16, 32, 16, 64, 3, 2, 1),
    (16, 64, 8, 64, 3, 1, 1),
    (64, 16, 128, 32, 5, 1, 2),
]


def time_fn(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_shapes(repeats):
    names = available_backends()
    rng = np.random.default_rng(0)
    print(f"{'shape (N,Ci,T,Co,K,s,p)':>28} {'pass':>8}", end="")
    for name in names:
        print(f" {name:>12}", end="")
    print(" " + ("speedup" if len(names) > 1 else ""))

    totals = {name: 0.0 for name in names}
    for shape in SHAPES:
        n, ci, t, co, k, stride, padding = shape
        x = rng.normal(size=(n, ci, t))
        w = rng.normal(size=(co, ci, k))
        b = rng.normal(size=co)
        t_out = (t + 2 * padding - k) // stride + 1
        g = rng.normal(size=(n, co, t_out))

        for direction in ("forward", "backward"):
            times = {}
            for name in names:
                backend = get_backend(name)
                if direction == "forward":
                    fn = lambda be=backend: be.conv1d_forward(x, w, b, stride, padding)
                else:
                    fn = lambda be=backend: be.conv1d_backward(g, x, w, stride, padding)
                times[name] = time_fn(fn, repeats)
                totals[name] += times[name]
            row = f"{str(shape):>28} {direction:>8}"
            for name in names:
                row += f" {times[name] * 1e6:>10.1f}us"
            if len(names) > 1:
                row += f"  {times[names[0]] / times[names[-1]]:>6.2f}x"
            print(row)
    print()
    for name in names:
        print(f"total {name}: {totals[name] * 1e3:.3f} ms per sweep")


def bench_training_step(repeats):
    """One full forward+backward+step of the default desk-scale model."""
    import os

    from dualpath_har.data import SynthConfig, normalize_dataset, synth_generate
    from dualpath_har.trainer import TrainConfig, fit

    dataset = normalize_dataset(synth_generate(SynthConfig(samples_per_class=8, seed=0)))
    config = TrainConfig(epochs=max(1, repeats // 10), batch_size=16, seed=0)
    start = time.perf_counter()
    result = fit(dataset, config, track_train_accuracy=False)
    elapsed = time.perf_counter() - start
    steps = len(result.batch_records)
    backend = os.environ.get("DUALPATH_HAR_KERNELS", "auto")
    print(f"\nend-to-end: {steps} training steps in {elapsed:.2f}s "
          f"({elapsed / steps * 1e3:.1f} ms/step, kernels={backend})")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    print(f"available backends: {', '.join(available_backends())}")
    bench_shapes(args.repeats)
    bench_training_step(args.repeats)


if __name__ == "__main__":
    main()
