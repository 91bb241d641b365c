"""Time the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--fit]

Kernel timings call the ``*_nb`` and ``*_np`` variants side by side in one
process. ``--fit`` also times a full adaptive fit in two subprocesses, one per
value of ``THBFIT_USE_NUMBA``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from thbfit import kernels
from thbfit.splinecore import KnotVector, monomial_exponents, refine_knots

FIT_SCRIPT = """
import time
from thbfit import kernels
from thbfit.adaptive import FitConfig, fit_adaptive
from thbfit.datasets import peak_samples
from thbfit.localfit import ScatteredDataset
from thbfit.splinecore import TensorSpace
X, f = peak_samples(16000, seed=1)
F = ScatteredDataset(X, f)
cfg = FitConfig(TensorSpace.uniform([-1, -1], [1, 1], [15, 15], (4, 4)), 2e-3, max_levels=7)
fit_adaptive(F, cfg)  # warm-up and compile

best = float("inf")
for _ in range(2):
    t0 = time.perf_counter()
    out = fit_adaptive(F, cfg)
    best = min(best, time.perf_counter() - t0)
print(kernels.BACKEND, out.reports[-1].ndof, f"{best:.3f}")
"""


def cases(rng):
    kv = KnotVector.clamped(np.linspace(0, 1, 257), 4)
    t = rng.uniform(0, 1, 200_000)
    spans = np.ascontiguousarray(kv.cell_span[kv.find_cell(t)])
    fine = refine_knots(KnotVector.clamped(np.linspace(0, 1, 2049), 4))
    coarse = KnotVector.clamped(np.linspace(0, 1, 2049), 4)
    mus = np.searchsorted(coarse.knots, fine.knots[: fine.num_funcs], side="right") - 1
    mus = np.minimum(mus, coarse.num_funcs - 1).astype(np.int64)
    vals = rng.uniform(size=(2, 200_000, 5))
    table = rng.normal(size=(1000, 25))
    rows = rng.integers(0, 1000, 200_000)
    degs = np.array([4, 4], dtype=np.int64)
    u = rng.uniform(size=(200_000, 2))
    exps = monomial_exponents(2, 4)
    return {
        "basis_funs": (kv.knots, 4, spans, t),
        "oslo_weights": (coarse.knots, fine.knots, 4, mus),
        "eval_cells": (vals, degs, rows, table),
        "power_matrix": (u, exps),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--fit", action="store_true", help="also time an end-to-end fit per backend")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, a in cases(rng).items():
        nb, npf = getattr(kernels, name + "_nb"), getattr(kernels, name + "_np")
        nb(*a)  # compile
        t_nb = min(timeit.repeat(lambda: nb(*a), number=1, repeat=args.repeat)) * 1e3
        t_np = min(timeit.repeat(lambda: npf(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<14}{t_nb:>12.2f}{t_np:>12.2f}{t_np / t_nb:>9.1f}x")
    if args.fit:
        print("\nend-to-end fit (peak, 16000 points, d=4, eps=2e-3)")
        for flag in ("1", "0"):
            env = dict(os.environ, THBFIT_USE_NUMBA=flag)
            res = subprocess.run([sys.executable, "-c", FIT_SCRIPT], env=env,
                                 capture_output=True, text=True, check=True)
            backend, ndof, secs = res.stdout.split()
            print(f"  {backend:<6} NDOF={ndof}  best of 2: {float(secs):.2f} s")


if __name__ == "__main__":
    main()
