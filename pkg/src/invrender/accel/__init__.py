"""Ray/scene intersection through a median-split bounding-volume hierarchy.

The traversal kernel comes from the compiled ``_traverse`` extension when it
was built, otherwise from the numpy implementation in ``_traverse_py``. Set
``INVRENDER_PURE_PYTHON=1`` to force the fallback; ``INVRENDER_NUM_THREADS``
sets the worker count of the compiled kernel.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..scene import Mesh
from . import _traverse_py

if os.environ.get("INVRENDER_PURE_PYTHON", "0") == "1":
    _compiled = None
else:
    try:
        from . import _traverse as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKENDS = {"python": _traverse_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled
DEFAULT_BACKEND = "compiled" if _compiled is not None else "python"

LEAF_SIZE = 4
MAX_DEPTH = 100


def num_threads() -> int:
    try:
        return max(1, int(os.environ.get("INVRENDER_NUM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    tmin: float = 0.0
    tmax: float = np.inf

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        if not 0.0 <= self.tmin < self.tmax:
            raise ValueError("need 0 <= tmin < tmax")


@dataclass
class Hit:
    t: float
    point: np.ndarray
    shading_normal: np.ndarray
    geometric_normal: np.ndarray
    barycentrics: np.ndarray
    face_index: int


@dataclass
class Bvh:
    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    prim_face: np.ndarray
    tri: np.ndarray
    radius: float
    depth: int

    @property
    def num_nodes(self) -> int:
        return len(self.lo)

    @property
    def epsilon(self) -> float:
        """Self-intersection offset, scaled with the scene."""
        return 1e-4 * self.radius

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left < 0)


def build_bvh(mesh: Mesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Median-split BVH over triangle centroids (largest centroid extent axis).

    Deterministic: ties in the sort keep the previous primitive order.
    """
    if mesh.num_faces == 0:
        raise ValueError("cannot build a BVH over an empty mesh")
    tri = mesh.vertices[mesh.faces]
    tlo, thi = tri.min(axis=1), tri.max(axis=1)
    cen = 0.5 * (tlo + thi)
    order = np.arange(mesh.num_faces)

    starts, counts, lefts, rights, depths = [0], [mesh.num_faces], [-1], [-1], [0]
    stack = [0]
    while stack:
        n = stack.pop()
        s, c = starts[n], counts[n]
        if c <= leaf_size:
            continue
        idx = order[s:s + c]
        ce = cen[idx]
        axis = int(np.argmax(ce.max(axis=0) - ce.min(axis=0)))
        order[s:s + c] = idx[np.argsort(ce[:, axis], kind="stable")]
        half = c // 2
        for cs, cc in ((s, half), (s + half, c - half)):
            starts.append(cs)
            counts.append(cc)
            lefts.append(-1)
            rights.append(-1)
            depths.append(depths[n] + 1)
        lefts[n], rights[n] = len(starts) - 2, len(starts) - 1
        stack.extend((rights[n], lefts[n]))

    starts = np.array(starts, dtype=np.int64)
    counts = np.array(counts, dtype=np.int64)
    left = np.array(lefts, dtype=np.int64)
    right = np.array(rights, dtype=np.int64)
    plo, phi = tlo[order], thi[order]
    lo = np.empty((len(starts), 3))
    hi = np.empty((len(starts), 3))
    for n in range(len(starts)):
        s, c = starts[n], counts[n]
        lo[n] = plo[s:s + c].min(axis=0)
        hi[n] = phi[s:s + c].max(axis=0)
    _, radius = mesh.bounding_sphere()
    depth = int(max(depths))
    if depth > MAX_DEPTH:
        raise RuntimeError("BVH too deep for the traversal stack")
    return Bvh(
        lo=np.ascontiguousarray(lo),
        hi=np.ascontiguousarray(hi),
        left=left,
        right=right,
        start=starts,
        count=counts,
        prim_face=np.ascontiguousarray(order, dtype=np.int64),
        tri=np.ascontiguousarray(tri[order]),
        radius=max(radius, 1e-12),
        depth=depth,
    )


def _kernel(backend: Optional[str]):
    return BACKENDS[backend or DEFAULT_BACKEND]


def _c(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def intersect_batch(bvh: Bvh, origins, directions, tmin=None, tmax=None, backend: Optional[str] = None):
    """Closest hits for a batch of rays.

    Returns ``(t, face, bary)``; ``face`` is -1 on a miss. Hits satisfy
    ``tmin < t < tmax``; equal distances resolve to the lower face index.
    """
    org = _c(origins).reshape(-1, 3)
    dirs = _c(directions).reshape(-1, 3)
    n = len(org)
    tmin = np.zeros(n) if tmin is None else _c(np.broadcast_to(tmin, (n,)))
    tmax = np.full(n, np.inf) if tmax is None else _c(np.broadcast_to(tmax, (n,)))
    out_t = np.empty(n)
    out_face = np.empty(n, dtype=np.int64)
    out_bary = np.empty((n, 3))
    if n:
        _kernel(backend).closest_hit(
            bvh.lo, bvh.hi, bvh.left, bvh.right, bvh.start, bvh.count, bvh.tri, bvh.prim_face,
            org, dirs, tmin, tmax, out_t, out_face, out_bary, num_threads(),
        )
    return out_t, out_face, out_bary


def occluded_batch(bvh: Bvh, origins, directions, tmin, tmax, backend: Optional[str] = None) -> np.ndarray:
    org = _c(origins).reshape(-1, 3)
    dirs = _c(directions).reshape(-1, 3)
    n = len(org)
    tmin = _c(np.broadcast_to(tmin, (n,)))
    tmax = _c(np.broadcast_to(tmax, (n,)))
    out = np.zeros(n, dtype=np.uint8)
    if n:
        _kernel(backend).any_hit(
            bvh.lo, bvh.hi, bvh.left, bvh.right, bvh.start, bvh.count, bvh.tri,
            org, dirs, tmin, tmax, out, num_threads(),
        )
    return out.astype(bool)


def segments_occluded(bvh: Bvh, a, b, backend: Optional[str] = None) -> np.ndarray:
    """True where a triangle crosses the open segment a-b, shrunk by epsilon at both ends."""
    a = _c(a).reshape(-1, 3)
    b = _c(b).reshape(-1, 3)
    delta = b - a
    dist = np.linalg.norm(delta, axis=1)
    dirs = delta / np.where(dist > 0, dist, 1.0)[:, None]
    eps = bvh.epsilon
    return occluded_batch(bvh, a, dirs, np.full(len(a), eps), dist - eps, backend)


def shading_frame_at(mesh: Mesh, face: np.ndarray, bary: np.ndarray, ray_dirs: np.ndarray):
    """Geometric and interpolated shading normals, both flipped to face the ray origin."""
    tri = mesh.faces[face]
    p0, p1, p2 = (mesh.vertices[tri[:, k]] for k in range(3))
    ng = np.cross(p1 - p0, p2 - p0)
    ng /= np.maximum(np.linalg.norm(ng, axis=1, keepdims=True), 1e-300)
    ns = (
        bary[:, 0:1] * mesh.normals[tri[:, 0]]
        + bary[:, 1:2] * mesh.normals[tri[:, 1]]
        + bary[:, 2:3] * mesh.normals[tri[:, 2]]
    )
    length = np.linalg.norm(ns, axis=1, keepdims=True)
    ns = np.where(length > 1e-12, ns / np.where(length > 1e-12, length, 1.0), ng)
    flip = np.sum(ng * ray_dirs, axis=1) > 0.0
    sign = np.where(flip, -1.0, 1.0)[:, None]
    return ng * sign, ns * sign, flip


def intersect(bvh: Bvh, mesh: Mesh, ray: Ray, backend: Optional[str] = None) -> Optional[Hit]:
    t, face, bary = intersect_batch(bvh, ray.origin[None], ray.direction[None], [ray.tmin], [ray.tmax], backend)
    if face[0] < 0:
        return None
    ng, ns, _ = shading_frame_at(mesh, face, bary, ray.direction[None])
    return Hit(
        t=float(t[0]),
        point=ray.origin + t[0] * ray.direction,
        shading_normal=ns[0],
        geometric_normal=ng[0],
        barycentrics=bary[0],
        face_index=int(face[0]),
    )


def occluded(bvh: Bvh, mesh: Mesh, a, b, backend: Optional[str] = None) -> bool:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.array_equal(a, b):
        raise ValueError("occlusion query needs two distinct points")
    return bool(segments_occluded(bvh, a, b, backend)[0])
