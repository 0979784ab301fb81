"""Time the hot kernels on every available backend and check they agree.

    python benchmarks/bench_kernels.py [--points 20000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from ismp.evaluation import SynthConfig, generate_synthetic
from ismp.geometry import estimate_normals
from ismp.kernels import available_backends


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(n_points, seed):
    cloud = generate_synthetic(SynthConfig("torus", n_points, "none", 0.0, rng_seed=seed)).cloud
    cloud = estimate_normals(cloud, 16)
    pts, nrm = cloud.points, cloud.normals
    rng = np.random.default_rng(seed)
    queries = pts[rng.choice(len(pts), 512, replace=False)]
    centers = np.arange(min(len(pts), 4096), dtype=np.int64)
    _, nbrs = available_backends()["python"].knn_brute(pts[centers], pts, 17)
    nbrs = nbrs[:, 1:]
    res = 224
    pix = rng.integers(0, res * res, size=len(pts))
    depth = rng.random(len(pts))
    return {
        "fps(m=512)": lambda k: k.fps(pts, 512, 0),
        "knn_brute(Q=512,k=16)": lambda k: k.knn_brute(queries, pts, 16),
        "spfh(Q=4096,K=16)": lambda k: k.spfh(pts, nrm, centers, nbrs, 11),
        "zbuffer_min(224^2)": lambda k: k.zbuffer_min(pix, depth, res * res),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-12, equal_nan=True)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)

    backends = available_backends()
    names = sorted(backends)
    print(f"{'kernel':26s}" + "".join(f"{n:>12s}" for n in names) + "   speedup  agree")
    for label, fn in cases(a.points, a.seed).items():
        times, outs = {}, {}
        for n in names:
            times[n], outs[n] = best_of(lambda: fn(backends[n]), a.repeat)
        row = f"{label:26s}" + "".join(f"{times[n] * 1e3:10.2f}ms" for n in names)
        if "cython" in times:
            agree = same(outs["cython"], outs["python"])
            row += f"   {times['python'] / times['cython']:6.1f}x  {'yes' if agree else 'NO'}"
        print(row)


if __name__ == "__main__":
    main()
