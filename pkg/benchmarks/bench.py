"""Compiled vs numpy kernels: training kernels, one training step and single-window inference.

    python3 benchmarks/bench.py [--reps N] [--json]

Each row reports the median wall time per call over ``reps`` calls after a
short warm-up, for every backend importable in this environment.
"""

import argparse
import json
import statistics
import time

import numpy as np

from gaitsep import _backend
from gaitsep import models as M
from gaitsep import runtime as R


def median_us(fn, reps, warmup=5):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return statistics.median(times) / 1000.0


def kernel_cases(rng):
    # shapes of the first and widest separable layers of the three models
    for name, (b, l, c, k) in {"dw 256x60x3 k3": (256, 60, 3, 3), "dw 256x30x8 k3": (256, 30, 8, 3),
                               "dw 256x20x100 k10": (256, 20, 100, 10)}.items():
        x = rng.standard_normal((b, l + k - 1, c))  # kernels take pre-padded input
        w = rng.standard_normal((k, c))
        g = rng.standard_normal((b, l, c))
        yield name, x, w, g


def bench_kernels(mods, reps, rng):
    rows = []
    for name, x, w, g in kernel_cases(rng):
        for eng, mod in mods.items():
            rows.append({"case": f"{name} forward", "engine": eng,
                         "us": median_us(lambda: mod.depthwise_forward(x, w), reps)})
            rows.append({"case": f"{name} backward", "engine": eng,
                         "us": median_us(lambda: mod.depthwise_backward(x, w, g), reps)})
    return rows


def use_kernels(mod):
    """Point the training kernels at ``mod``; returns the previous bindings."""
    names = ("depthwise_forward", "depthwise_backward", "maxpool_backward")
    old = {n: getattr(_backend, n) for n in names}
    for n in names:
        setattr(_backend, n, getattr(mod, n))
    return old


def bench_train_step(mods, reps, rng):
    """Forward + backward of one 256-window batch."""
    rows = []
    x = rng.standard_normal((256, 60, 3)) * 0.3
    onehot = np.eye(2)[rng.integers(0, 2, 256)]
    sw = np.ones(256)
    for name in M.MODEL_NAMES:
        spec = M.build_spec(name)
        params = M.init_params(spec, 0)
        for eng, mod in mods.items():
            old = use_kernels(mod)
            try:
                step_rng = np.random.default_rng(0)
                us = median_us(lambda: M.loss_and_grads(spec, params, x, onehot, sw, step_rng), max(3, reps // 5), 1)
            finally:
                use_kernels(type("saved", (), old))
            rows.append({"case": f"{name} train step (256)", "engine": eng, "us": us})
    return rows


def bench_inference(mods, reps, rng):
    rows = []
    window = (rng.standard_normal((60, 3)) * 0.2).astype(np.float32)
    for name in M.MODEL_NAMES:
        spec = M.build_spec(name)
        blob = R.export(spec, M.init_params(spec, 0), 0.5)
        for eng in mods:
            rt = R.load(blob, engine=eng)
            arena = rt.new_arena()
            rows.append({"case": f"{name} infer (1 window)", "engine": eng,
                         "us": median_us(lambda: rt.p_gait(window, arena), reps * 10)})
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    mods = _backend.available()
    rows = bench_kernels(mods, args.reps, rng) + bench_inference(mods, args.reps, rng) + bench_train_step(mods, args.reps, rng)
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    by_case = {}
    for r in rows:
        by_case.setdefault(r["case"], {})[r["engine"]] = r["us"]
    engines = sorted(mods)
    print(f"{'case':34s}" + "".join(f"{e + ' us':>14s}" for e in engines) + f"{'speedup':>10s}")
    for case, vals in by_case.items():
        cells = "".join(f"{vals[e]:14.1f}" if e in vals else f"{'':14s}" for e in engines)
        speed = f"{vals['python'] / vals['cython']:9.1f}x" if len(vals) == 2 and "cython" in vals else ""
        print(f"{case:34s}{cells}{speed:>10s}")


if __name__ == "__main__":
    main()
