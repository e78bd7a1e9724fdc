"""Compare the compiled and pure-Python geometry kernels.

    python3 benchmarks/bench_kernels.py [--pairs 2000] [--repeat 3]

Reports best-of-N wall time per backend and the largest disagreement.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from promptdet3d import _pykernels
from promptdet3d.geometry import Intrinsics, make_rays, random_rotation

try:
    from promptdet3d import _kernels
except ImportError:
    _kernels = None


def _boxes(rng, n, spread):
    centers = rng.normal(size=(n, 3)) * spread + [0.0, 0.0, 6.0]
    dims = rng.uniform(0.5, 2.0, (n, 3))
    rots = np.stack([random_rotation(rng) for _ in range(n)])
    return centers, rots, dims


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def bench_intersection(impl, pairs, repeat):
    rng = np.random.default_rng(0)
    ca, ra, da = _boxes(rng, pairs, 0.4)
    cb, rb, db = _boxes(rng, pairs, 0.4)

    def run():
        return np.array([impl.box_intersection_volume(ca[i], ra[i], da[i], cb[i], rb[i], db[i])
                         for i in range(pairs)])

    return _best(run, repeat)


def bench_raycast(impl, repeat, boxes=8):
    rng = np.random.default_rng(1)
    rays = make_rays(Intrinsics(120.0, 120.0, 64.0, 48.0, 128, 96), 96, 128)
    c, r, d = _boxes(rng, boxes, 1.5)
    return _best(lambda: impl.raycast_cuboids(rays[..., 0], rays[..., 1], c, r, d)[0], repeat)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels are not built; only the Python fallback is available")
    rows = []
    for name, label, fn in (("intersection", f"{args.pairs} box pairs", lambda m: bench_intersection(m, args.pairs, args.repeat)),
                            ("raycast", "128x96 rays, 8 boxes", lambda m: bench_raycast(m, args.repeat))):
        t_py, out_py = fn(_pykernels)
        if _kernels is None:
            rows.append((name, label, t_py, None, None))
            continue
        t_c, out_c = fn(_kernels)
        finite = np.isfinite(out_py)
        diff = float(np.abs(out_py[finite] - out_c[finite]).max()) if finite.any() else 0.0
        rows.append((name, label, t_py, t_c, diff))
    print(f"{'kernel':<13}{'workload':<24}{'python [s]':>11}{'cython [s]':>11}{'speedup':>9}{'max diff':>11}")
    for name, label, t_py, t_c, diff in rows:
        if t_c is None:
            print(f"{name:<13}{label:<24}{t_py:>11.4f}{'-':>11}{'-':>9}{'-':>11}")
        else:
            print(f"{name:<13}{label:<24}{t_py:>11.4f}{t_c:>11.4f}{t_py / t_c:>8.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
