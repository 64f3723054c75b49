"""Compare the compiled and numpy BVH traversal kernels on the same rays.

    python3 benchmarks/bench_traverse.py --subdivisions 5 --rays 20000
"""

import argparse
import time

import numpy as np

from invrender import accel, shapes
from invrender.scene import Mesh


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--subdivisions", type=int, default=5)
    ap.add_argument("--rays", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    v, f = shapes.icosphere(args.subdivisions)
    mesh = Mesh(v, f, np.full((len(v), 3), 0.5), np.zeros((len(v), 3)))
    t0 = time.perf_counter()
    bvh = accel.build_bvh(mesh)
    print(f"{mesh.num_faces} faces, {bvh.num_nodes} nodes, depth {bvh.depth}, "
          f"build {time.perf_counter() - t0:.3f}s")

    rng = np.random.default_rng(args.seed)
    org = rng.normal(size=(args.rays, 3))
    org = 3.0 * org / np.linalg.norm(org, axis=1, keepdims=True)
    target = rng.uniform(-0.8, 0.8, size=(args.rays, 3))
    dirs = target - org
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    results = {}
    for name in accel.BACKENDS:
        hit_t, hit = best_of(lambda: accel.intersect_batch(bvh, org, dirs, backend=name), args.repeat)
        occ_t, occ = best_of(lambda: accel.occluded_batch(bvh, org, dirs, 0.0, np.inf, backend=name), args.repeat)
        results[name] = (hit, occ)
        print(f"{name:>9}: closest hit {hit_t * 1e3:8.1f} ms ({args.rays / hit_t / 1e6:.2f} Mray/s), "
              f"any hit {occ_t * 1e3:8.1f} ms")
    if len(results) == 2:
        (h1, o1), (h2, o2) = results.values()
        same = all(np.array_equal(a, b) for a, b in zip(h1, h2)) and np.array_equal(o1, o2)
        print("backends agree bit for bit" if same else "BACKENDS DISAGREE")
    else:
        print("compiled kernel not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
