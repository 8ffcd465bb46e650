"""Compare the compiled projector kernels against the numpy fallback.

Run as ``python benchmarks/bench_kernels.py [--sizes 64,128,256]``.  Each
row times forward projection, backprojection, and a full FBP at a geometry
scaled like the training setup (views ~ 1.4n, detectors ~ 1.5n), and
reports the speedup of the compiled extension.
"""

import argparse
import time

import numpy as np

from ubct.kernels import available_backends, get_backend
from ubct.physics import Geometry, fbp, make_phantom


def _time(fn, min_repeats=3, min_seconds=0.2):
    best = np.inf
    total = 0.0
    reps = 0
    while reps < min_repeats or total < min_seconds:
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        best = min(best, dt)
        total += dt
        reps += 1
    return best


def bench_size(n, backends):
    geom = Geometry(n=n, n_views=int(1.4 * n), n_dets=int(1.5 * n) | 1)
    img = make_phantom("shepp_logan", n)
    ct, st = np.cos(geom.angles), np.sin(geom.angles)
    rows = {}
    for name in backends:
        mod = get_backend(name)
        sino = mod.forward_project(img, ct, st, geom.n_dets, geom.det_spacing)
        rows[name] = {
            "forward": _time(lambda: mod.forward_project(img, ct, st, geom.n_dets,
                                                         geom.det_spacing)),
            "back": _time(lambda: mod.back_project(sino, ct, st, geom.n,
                                                   geom.det_spacing)),
        }
    # fbp goes through whichever backend the package selected at import
    rows["fbp"] = _time(lambda: fbp(np.zeros(geom.sino_shape) + 1.0, geom))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="64,128,256",
                    help="comma-separated image sizes")
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    header = f"{'n':>5} {'op':>8}"
    for b in backends:
        header += f" {b + ' (ms)':>14}"
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)
    for n in sizes:
        rows = bench_size(n, backends)
        for op in ("forward", "back"):
            line = f"{n:>5} {op:>8}"
            for b in backends:
                line += f" {rows[b][op] * 1e3:>14.2f}"
            if len(backends) == 2:
                line += f" {rows[backends[1]][op] / rows[backends[0]][op]:>8.1f}x"
            print(line)
        print(f"{n:>5} {'fbp':>8} {rows['fbp'] * 1e3:>14.2f}  (selected backend)")


if __name__ == "__main__":
    main()
