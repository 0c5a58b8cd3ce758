#!/usr/bin/env python3
"""Benchmark the hot kernels under both execution modes.

Runs itself twice in subprocesses (ACTIVESEG_JIT=1 and =0) and prints a
side-by-side table of per-call times for the convolution forward/backward
kernels and the sliding-window class counts, plus one full adaptation step.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def timeit(fn, repeat):
    fn()  # warmup (includes jit compilation)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def run_benchmarks(repeat):
    import numpy as np

    from activeseg import adapter, kernels, numerics, streamlab
    from activeseg.annotator import AnnotatorSpec

    rng = np.random.default_rng(0)
    x = rng.normal(0, 1, (48, 48, 16))
    w = rng.normal(0, 1, (3, 3, 16, 16))
    b = rng.normal(0, 1, 16)
    gy = rng.normal(0, 1, (48, 48, 16))
    pred = rng.integers(0, 5, (48, 48))

    net = numerics.SegNet(numerics.standard_layers(3, (16, 16), 5), seed=0)
    scene = streamlab.gen_scene(5, 48, 48, seed=1)
    session = adapter.Session(net, numerics.AdamState.fresh(net.n_params, lr=1e-3),
                              seed=0)
    spec = adapter.AdapterSpec(kind="b1", budget=16)
    annot = AnnotatorSpec(kind="bvsb")

    def full_step():
        adapter.step_b1(session, scene, spec, annot, adapter.SimulatedOracle(),
                        session.frames_seen)
        session.frames_seen += 1

    results = {
        "mode": "numba" if kernels.JIT_ENABLED else "numpy",
        "conv_forward_48x48x16": timeit(lambda: kernels.conv2d_forward(x, w, b), repeat),
        "conv_backward_48x48x16": timeit(lambda: kernels.conv2d_backward(x, w, gy), repeat),
        "window_counts_k1": timeit(lambda: kernels.window_class_counts(pred, 1, 5), repeat),
        "window_counts_k5": timeit(lambda: kernels.window_class_counts(pred, 5, 5), repeat),
        "adapt_step_b1": timeit(full_step, max(3, repeat // 10)),
    }
    return results


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=50)
    parser.add_argument("--single", action="store_true",
                        help="run in the current mode only, print JSON")
    args = parser.parse_args()

    if args.single:
        print(json.dumps(run_benchmarks(args.repeat)))
        return

    rows = {}
    for mode in ("1", "0"):
        env = dict(os.environ, ACTIVESEG_JIT=mode)
        out = subprocess.run(
            [sys.executable, __file__, "--single", "--repeat", str(args.repeat)],
            env=env, capture_output=True, text=True)
        if out.returncode != 0:
            print(out.stderr, file=sys.stderr)
            sys.exit(1)
        data = json.loads(out.stdout.strip().splitlines()[-1])
        rows[data.pop("mode")] = data

    keys = list(next(iter(rows.values())))
    print(f"{'kernel':28s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for key in keys:
        jit = rows["numba"][key]
        plain = rows["numpy"][key]
        print(f"{key:28s} {jit * 1e3:>9.3f} ms {plain * 1e3:>9.3f} ms "
              f"{plain / jit:>8.2f}x")


if __name__ == "__main__":
    main()
