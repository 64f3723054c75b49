"""Pure-numpy BVH traversal, used when the compiled kernel is unavailable.

Rays are processed breadth-first: every iteration tests the current set of
(ray, node) pairs against their boxes, intersects leaf triangles, and
replaces interior nodes by their children. Arithmetic matches the compiled
kernel operation for operation.
"""

from __future__ import annotations

import numpy as np

_U = 2.0 ** -53
FAR_PAD = 1.0 + 2.0 * (3.0 * _U) / (1.0 - 3.0 * _U)
BIG_INV = 1e300


def _inv(d: np.ndarray) -> np.ndarray:
    safe = np.where(d == 0.0, 1.0, d)
    return np.where(d == 0.0, BIG_INV, 1.0 / safe)


def _box_hit(lo, hi, org, inv, tmin, tbest):
    near = None
    far = None
    for a in range(3):
        t0 = (lo[:, a] - org[:, a]) * inv[:, a]
        t1 = (hi[:, a] - org[:, a]) * inv[:, a]
        if near is None:
            near, far = np.fmin(t0, t1), np.fmax(t0, t1)
        else:
            near = np.fmax(near, np.fmin(t0, t1))
            far = np.fmin(far, np.fmax(t0, t1))
    far = far * FAR_PAD
    return (near <= far) & (far > tmin) & (near <= tbest)


def ray_setup(dirs: np.ndarray):
    """Axis permutation and shear constants of the watertight test."""
    n = len(dirs)
    kz = np.zeros(n, dtype=np.int64)
    absd = np.abs(dirs)
    kz = np.where(absd[:, 1] > absd[np.arange(n), kz], 1, kz)
    kz = np.where(absd[:, 2] > absd[np.arange(n), kz], 2, kz)
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    dz = dirs[np.arange(n), kz]
    swap = dz < 0.0
    kx, ky = np.where(swap, ky, kx), np.where(swap, kx, ky)
    rows = np.arange(n)
    sx = dirs[rows, kx] / dz
    sy = dirs[rows, ky] / dz
    sz = 1.0 / dz
    return kx, ky, kz, sx, sy, sz


def watertight(tri: np.ndarray, org: np.ndarray, setup) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized watertight ray/triangle test.

    ``tri`` is (n, 3, 3), ``org`` (n, 3), ``setup`` the per-ray tuple from
    :func:`ray_setup` already gathered to length n. Returns (ok, t, bary).
    """
    kx, ky, kz, sx, sy, sz = setup
    rows = np.arange(len(org))
    rel = tri - org[:, None, :]
    ak = rel[rows, :, kz]  # (n, 3) kz component of each corner
    px = rel[rows, :, kx] - sx[:, None] * ak
    py = rel[rows, :, ky] - sy[:, None] * ak
    ax, bx, cx = px[:, 0], px[:, 1], px[:, 2]
    ay, by, cy = py[:, 0], py[:, 1], py[:, 2]
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    neg = (u < 0.0) | (v < 0.0) | (w < 0.0)
    pos = (u > 0.0) | (v > 0.0) | (w > 0.0)
    det = u + v + w
    ok = ~(neg & pos) & (det != 0.0)
    sdet = np.where(ok, det, 1.0)
    az = sz * ak[:, 0]
    bz = sz * ak[:, 1]
    cz = sz * ak[:, 2]
    t = (u * az + v * bz + w * cz) / sdet
    bary = np.stack([u / sdet, v / sdet, w / sdet], axis=1)
    return ok, t, bary


def _leaf_pairs(ray, node, start, count):
    cnt = count[node]
    total = int(cnt.sum())
    rr = np.repeat(ray, cnt)
    offs = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    pp = np.repeat(start[node], cnt) + offs
    return rr, pp


def closest_hit(lo, hi, left, right, start, count, tri, prim_face,
                org, dirs, tmin, tmax, out_t, out_face, out_bary, num_threads=1):
    nr = len(org)
    best = np.array(tmax, dtype=np.float64, copy=True)
    best_face = np.full(nr, -1, dtype=np.int64)
    best_bary = np.zeros((nr, 3))
    inv = _inv(dirs)
    setup = ray_setup(dirs)
    ray = np.arange(nr)
    node = np.zeros(nr, dtype=np.int64)
    with np.errstate(invalid="ignore", over="ignore"):
        while ray.size:
            keep = _box_hit(lo[node], hi[node], org[ray], inv[ray], tmin[ray], best[ray])
            ray, node = ray[keep], node[keep]
            leaf = left[node] < 0
            if np.any(leaf):
                rr, pp = _leaf_pairs(ray[leaf], node[leaf], start, count)
                ok, t, bary = watertight(tri[pp], org[rr], tuple(a[rr] for a in setup))
                ok &= t > tmin[rr]
                rr, t, bary, f = rr[ok], t[ok], bary[ok], prim_face[pp[ok]]
                if rr.size:
                    order = np.lexsort((f, t, rr))
                    rr, t, bary, f = rr[order], t[order], bary[order], f[order]
                    first = np.ones(rr.size, dtype=bool)
                    first[1:] = rr[1:] != rr[:-1]
                    rr, t, bary, f = rr[first], t[first], bary[first], f[first]
                    cur_t, cur_f = best[rr], best_face[rr]
                    better = (t < cur_t) | ((t == cur_t) & (cur_f >= 0) & (f < cur_f))
                    rr = rr[better]
                    best[rr] = t[better]
                    best_face[rr] = f[better]
                    best_bary[rr] = bary[better]
            inner = ~leaf
            ir, inode = ray[inner], node[inner]
            ray = np.concatenate([ir, ir])
            node = np.concatenate([left[inode], right[inode]])
    out_face[:] = best_face
    out_t[:] = np.where(best_face >= 0, best, tmax)
    out_bary[:] = best_bary


def any_hit(lo, hi, left, right, start, count, tri, org, dirs, tmin, tmax, out_hit, num_threads=1):
    nr = len(org)
    hit = np.zeros(nr, dtype=bool)
    inv = _inv(dirs)
    setup = ray_setup(dirs)
    ray = np.arange(nr)
    node = np.zeros(nr, dtype=np.int64)
    with np.errstate(invalid="ignore", over="ignore"):
        while ray.size:
            keep = _box_hit(lo[node], hi[node], org[ray], inv[ray], tmin[ray], tmax[ray]) & ~hit[ray]
            ray, node = ray[keep], node[keep]
            leaf = left[node] < 0
            if np.any(leaf):
                rr, pp = _leaf_pairs(ray[leaf], node[leaf], start, count)
                ok, t, _ = watertight(tri[pp], org[rr], tuple(a[rr] for a in setup))
                ok &= (t > tmin[rr]) & (t < tmax[rr])
                hit[rr[ok]] = True
            inner = ~leaf & ~hit[ray]
            ir, inode = ray[inner], node[inner]
            ray = np.concatenate([ir, ir])
            node = np.concatenate([left[inode], right[inode]])
    out_hit[:] = hit
