"""Compare the numba and numpy kernels on the same forward + recon workload.

    python3 benchmarks/bench_kernels.py --grid 128 --array virtual_circle --repeat 3

Prints one JSON line per (stage, backend) plus the max abs difference
between backends.
"""
import argparse
import json
import time

import numpy as np

from oasim import _kernels
from oasim.forward import ImageGrid, PhysicsConfig, simulate_signals
from oasim.geometry import ARRAY_KINDS, make_array
from oasim.phantom import PhantomParams, generate_phantom
from oasim.recon import DEFAULT_BAND, ReconConfig, reconstruct


def _time(fn, repeat):
    out = fn()  # warm-up (JIT compile on first call)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--array", choices=ARRAY_KINDS, default="virtual_circle")
    ap.add_argument("--grid", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    geom = make_array(args.array)
    grid = ImageGrid(args.grid, 25.6e-3 / args.grid)
    physics = PhysicsConfig()
    pmap = generate_phantom(0, PhantomParams.for_size(args.grid)).pressure
    config = ReconConfig(grid, band=DEFAULT_BAND)
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    eff = _kernels.set_threads(args.threads)

    results = {}
    for backend in backends:
        t_fwd, sig = _time(lambda: simulate_signals(pmap, geom, physics, grid, backend), args.repeat)
        t_rec, img = _time(lambda: reconstruct(sig, geom, config, backend), args.repeat)
        results[backend] = (sig.values, img)
        for stage, t in (("forward", t_fwd), ("recon", t_rec)):
            print(json.dumps({"stage": stage, "backend": backend, "array": args.array, "grid": args.grid,
                              "threads": eff, "best_s": round(t, 4)}))
    if len(results) == 2:
        (s0, i0), (s1, i1) = results["numpy"], results["numba"]
        print(json.dumps({"max_abs_diff_signals": float(np.abs(s0 - s1).max()),
                          "max_abs_diff_image": float(np.abs(i0 - i1).max())}))


if __name__ == "__main__":
    main()
