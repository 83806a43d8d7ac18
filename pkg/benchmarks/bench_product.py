"""Compiled versus numpy packed products at flow-sized batches.

    python benchmarks/bench_product.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from tflow import _core
from tflow.blocks import nnz, orbital_shift, product
from tflow.flow import FlowEquations, FlowOptions
from tflow.algebra import ModelParams
from tflow.contractions import TemperaturePath
from tflow.timegrid import TimeGrid

CASES = [
    ("propagator x vertex (N=256, lead block)", (256, 1), (1, 256)),
    ("frequency-domain J (512 x 256)", (512, 1), (512, 256)),
    ("vertex grid products (17 x 17 x 17)", (17, 17, 1), (1, 17, 17)),
]


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_products(repeat):
    rng = np.random.default_rng(0)
    sa, sb = (0, 0), orbital_shift(1)
    print(f"{'case':44s} {'compiled':>10s} {'numpy':>10s} {'speed-up':>9s}")
    for name, ba, bb in CASES:
        X = rng.normal(size=ba + (nnz(sa),)) + 1j * rng.normal(size=ba + (nnz(sa),))
        Y = rng.normal(size=bb + (nnz(sb),)) + 1j * rng.normal(size=bb + (nnz(sb),))
        run = lambda: product(X, sa, Y, sb)
        fast = _best(run, repeat) if _core.HAVE_COMPILED else float("nan")
        saved = _core.HAVE_COMPILED
        _core.HAVE_COMPILED = False
        try:
            slow = _best(run, repeat)
        finally:
            _core.HAVE_COMPILED = saved
        print(f"{name:44s} {fast:10.4f} {slow:10.4f} {slow / fast:9.1f}")


def bench_rhs(n_points, repeat):
    params = ModelParams.symmetric(-2.0, 4.0, gamma=1.0, bias=1.0)
    grid = TimeGrid.from_tmax(5.0, n_points)
    eqs = FlowEquations(params, grid, TemperaturePath.linear(100.0, 0.01, 2), FlowOptions(check_cp=False))
    y = eqs.initial_state().y
    f = eqs(0.0, y, np.zeros_like(y))
    saved = _core.HAVE_COMPILED
    out = {}
    for label, flag in (("compiled", saved), ("numpy", False)):
        _core.HAVE_COMPILED = flag
        out[label] = _best(lambda: eqs(0.0, y, f), repeat)
    _core.HAVE_COMPILED = saved
    print(f"flow right-hand side, N={n_points}: compiled {out['compiled']:.2f} s, numpy {out['numpy']:.2f} s")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--rhs-points", type=int, default=129)
    args = ap.parse_args()
    if not _core.HAVE_COMPILED:
        print("compiled kernel not available; showing numpy timings only")
    bench_products(args.repeat)
    bench_rhs(args.rhs_points, max(1, args.repeat // 2))
