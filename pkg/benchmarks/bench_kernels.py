"""Compiled vs pure-NumPy kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--nodes 121]

Prints the median time per call for each back end and the speed-up.
"""

import argparse
import statistics
import time

import numpy as np

from stochplan import kernels
from stochplan.grid import Grid
from stochplan.hjb import DiscreteGenerator
from stochplan.models import bio_switch_model


def median_time(fn, repeat):
    fn()  # warm-up
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return statistics.median(ts)


def cases(nodes, seed=0):
    rng = np.random.default_rng(seed)
    grid = Grid((0.0, 0.0), (120.0, 120.0), (nodes, nodes))
    model = bio_switch_model()
    aff = DiscreteGenerator(model, grid, "affine")
    lat = DiscreteGenerator(model, grid, "lattice", 9)
    V = rng.uniform(size=grid.size)
    interior = (rng.random(grid.size) < 0.9).astype(np.uint8)
    D = rng.uniform(size=grid.size)
    inside = (rng.random((2000, 3, 400)) < 0.99).astype(np.uint8)
    dl = np.array([100, 250, -1], dtype=np.int64)
    return {
        f"hjb_step_affine ({nodes}x{nodes})": (
            "hjb_step_affine", (V, interior, D, aff.plus, aff.minus, aff.inv_h, aff.Bp, aff.Bm, aff.hA0, aff.Cp,
                                aff.Cm, aff.hAj, aff.cfl_bound)),
        f"hjb_step_lattice ({nodes}x{nodes}, 81 controls)": (
            "hjb_step_lattice", (V, interior, D, lat.plus, lat.minus, lat.inv_h, lat.Fp, lat.Fm, lat.hA,
                                 lat.cfl_bound)),
        "exit_scan (2000 paths, 3 sets, 400 steps)": ("exit_scan", (inside, dl, True)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--nodes", type=int, default=121)
    args = ap.parse_args(argv)
    py = kernels.backend("python")
    try:
        cy = kernels.backend("compiled")
    except ImportError:
        print("compiled kernels are not built; only the NumPy timings are shown")
        cy = None
    print(f"{'kernel':48s} {'numpy [ms]':>11s} {'compiled [ms]':>14s} {'speed-up':>9s}")
    for label, (name, args_) in cases(args.nodes).items():
        tp = median_time(lambda: getattr(py, name)(*args_), args.repeat)
        if cy is None:
            print(f"{label:48s} {tp * 1e3:11.3f} {'-':>14s} {'-':>9s}")
            continue
        a, b = getattr(py, name)(*args_), getattr(cy, name)(*args_)
        if not np.array_equal(a, b):
            raise SystemExit(f"{label}: back ends disagree")
        tc = median_time(lambda: getattr(cy, name)(*args_), args.repeat)
        print(f"{label:48s} {tp * 1e3:11.3f} {tc * 1e3:14.3f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
