# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled BVH traversal: closest-hit and any-hit queries for ray batches.

Mirrors ``_traverse_py`` operation for operation (watertight triangle test,
slab test with a padded far distance, (t, face) lexicographic tie-break), so
both backends return identical hits.
"""

from cython.parallel cimport prange
from libc.math cimport fabs, fmin, fmax

cdef double FAR_PAD = 1.0 + 2.0 * (3.0 * 1.1102230246251565e-16) / (1.0 - 3.0 * 1.1102230246251565e-16)
cdef double BIG_INV = 1e300
DEF STACK_SIZE = 128


cdef inline bint _tri_hit(const double[:, :, ::1] tri, long p,
                          double ox, double oy, double oz,
                          int kx, int ky, int kz,
                          double sx, double sy, double sz,
                          double* t_out, double* b0, double* b1, double* b2) noexcept nogil:
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz
    cdef double a[3]
    cdef double b[3]
    cdef double c[3]
    cdef double u, v, w, det, t
    a[0] = tri[p, 0, 0] - ox; a[1] = tri[p, 0, 1] - oy; a[2] = tri[p, 0, 2] - oz
    b[0] = tri[p, 1, 0] - ox; b[1] = tri[p, 1, 1] - oy; b[2] = tri[p, 1, 2] - oz
    c[0] = tri[p, 2, 0] - ox; c[1] = tri[p, 2, 1] - oy; c[2] = tri[p, 2, 2] - oz
    ax = a[kx] - sx * a[kz]
    ay = a[ky] - sy * a[kz]
    bx = b[kx] - sx * b[kz]
    by = b[ky] - sy * b[kz]
    cx = c[kx] - sx * c[kz]
    cy = c[ky] - sy * c[kz]
    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
        return False
    det = u + v + w
    if det == 0.0:
        return False
    az = sz * a[kz]
    bz = sz * b[kz]
    cz = sz * c[kz]
    t = (u * az + v * bz + w * cz) / det
    t_out[0] = t
    b0[0] = u / det
    b1[0] = v / det
    b2[0] = w / det
    return True


cdef inline void _setup_ray(double dx, double dy, double dz,
                            int* kx, int* ky, int* kz,
                            double* sx, double* sy, double* sz) noexcept nogil:
    cdef double d[3]
    cdef int tmp
    d[0] = dx; d[1] = dy; d[2] = dz
    kz[0] = 0
    if fabs(d[1]) > fabs(d[kz[0]]):
        kz[0] = 1
    if fabs(d[2]) > fabs(d[kz[0]]):
        kz[0] = 2
    kx[0] = (kz[0] + 1) % 3
    ky[0] = (kx[0] + 1) % 3
    if d[kz[0]] < 0.0:
        tmp = kx[0]
        kx[0] = ky[0]
        ky[0] = tmp
    sx[0] = d[kx[0]] / d[kz[0]]
    sy[0] = d[ky[0]] / d[kz[0]]
    sz[0] = 1.0 / d[kz[0]]


cdef inline bint _box_hit(const double[:, ::1] lo, const double[:, ::1] hi, long n,
                          double ox, double oy, double oz,
                          double ix, double iy, double iz,
                          double tmin, double tbest) noexcept nogil:
    cdef double t0, t1, near, far
    t0 = (lo[n, 0] - ox) * ix
    t1 = (hi[n, 0] - ox) * ix
    near = fmin(t0, t1)
    far = fmax(t0, t1)
    t0 = (lo[n, 1] - oy) * iy
    t1 = (hi[n, 1] - oy) * iy
    near = fmax(near, fmin(t0, t1))
    far = fmin(far, fmax(t0, t1))
    t0 = (lo[n, 2] - oz) * iz
    t1 = (hi[n, 2] - oz) * iz
    near = fmax(near, fmin(t0, t1))
    far = fmin(far, fmax(t0, t1))
    far = far * FAR_PAD
    return near <= far and far > tmin and near <= tbest


cdef inline double _inv(double d) noexcept nogil:
    if d == 0.0:
        return BIG_INV
    return 1.0 / d


cdef void _closest_one(const double[:, ::1] lo, const double[:, ::1] hi,
                       const long[::1] left, const long[::1] right,
                       const long[::1] start, const long[::1] count,
                       const double[:, :, ::1] tri, const long[::1] prim_face,
                       const double[:, ::1] org, const double[:, ::1] dirs,
                       const double[::1] tmin, const double[::1] tmax,
                       double[::1] out_t, long[::1] out_face, double[:, ::1] out_bary,
                       long r) noexcept nogil:
    cdef long stack[STACK_SIZE]
    cdef int sp = 0
    cdef long n, p, f
    cdef int kx, ky, kz
    cdef double sx, sy, sz, t, b0, b1, b2
    cdef double ox = org[r, 0], oy = org[r, 1], oz = org[r, 2]
    cdef double ix = _inv(dirs[r, 0]), iy = _inv(dirs[r, 1]), iz = _inv(dirs[r, 2])
    cdef double best = tmax[r]
    cdef double lo_t = tmin[r]
    cdef long best_face = -1
    cdef double bb0 = 0.0, bb1 = 0.0, bb2 = 0.0
    _setup_ray(dirs[r, 0], dirs[r, 1], dirs[r, 2], &kx, &ky, &kz, &sx, &sy, &sz)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        n = stack[sp]
        if not _box_hit(lo, hi, n, ox, oy, oz, ix, iy, iz, lo_t, best):
            continue
        if left[n] < 0:
            for p in range(start[n], start[n] + count[n]):
                if _tri_hit(tri, p, ox, oy, oz, kx, ky, kz, sx, sy, sz, &t, &b0, &b1, &b2):
                    if t <= lo_t:
                        continue
                    f = prim_face[p]
                    if t < best or (t == best and best_face >= 0 and f < best_face):
                        best = t
                        best_face = f
                        bb0 = b0
                        bb1 = b1
                        bb2 = b2
        elif sp + 2 <= STACK_SIZE:
            stack[sp] = right[n]
            stack[sp + 1] = left[n]
            sp += 2
    out_face[r] = best_face
    out_t[r] = best if best_face >= 0 else tmax[r]
    out_bary[r, 0] = bb0
    out_bary[r, 1] = bb1
    out_bary[r, 2] = bb2


cdef bint _any_one(const double[:, ::1] lo, const double[:, ::1] hi,
                   const long[::1] left, const long[::1] right,
                   const long[::1] start, const long[::1] count,
                   const double[:, :, ::1] tri,
                   const double[:, ::1] org, const double[:, ::1] dirs,
                   const double[::1] tmin, const double[::1] tmax,
                   long r) noexcept nogil:
    cdef long stack[STACK_SIZE]
    cdef int sp = 0
    cdef long n, p
    cdef int kx, ky, kz
    cdef double sx, sy, sz, t, b0, b1, b2
    cdef double ox = org[r, 0], oy = org[r, 1], oz = org[r, 2]
    cdef double ix = _inv(dirs[r, 0]), iy = _inv(dirs[r, 1]), iz = _inv(dirs[r, 2])
    cdef double hi_t = tmax[r]
    cdef double lo_t = tmin[r]
    _setup_ray(dirs[r, 0], dirs[r, 1], dirs[r, 2], &kx, &ky, &kz, &sx, &sy, &sz)
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        n = stack[sp]
        if not _box_hit(lo, hi, n, ox, oy, oz, ix, iy, iz, lo_t, hi_t):
            continue
        if left[n] < 0:
            for p in range(start[n], start[n] + count[n]):
                if _tri_hit(tri, p, ox, oy, oz, kx, ky, kz, sx, sy, sz, &t, &b0, &b1, &b2):
                    if lo_t < t < hi_t:
                        return True
        elif sp + 2 <= STACK_SIZE:
            stack[sp] = right[n]
            stack[sp + 1] = left[n]
            sp += 2
    return False


def closest_hit(const double[:, ::1] lo, const double[:, ::1] hi,
                const long[::1] left, const long[::1] right,
                const long[::1] start, const long[::1] count,
                const double[:, :, ::1] tri, const long[::1] prim_face,
                const double[:, ::1] org, const double[:, ::1] dirs,
                const double[::1] tmin, const double[::1] tmax,
                double[::1] out_t, long[::1] out_face, double[:, ::1] out_bary,
                int num_threads=1):
    cdef long r, nr = org.shape[0]
    if num_threads < 1:
        num_threads = 1
    for r in prange(nr, nogil=True, num_threads=num_threads, schedule="static"):
        _closest_one(lo, hi, left, right, start, count, tri, prim_face,
                     org, dirs, tmin, tmax, out_t, out_face, out_bary, r)


def any_hit(const double[:, ::1] lo, const double[:, ::1] hi,
            const long[::1] left, const long[::1] right,
            const long[::1] start, const long[::1] count,
            const double[:, :, ::1] tri,
            const double[:, ::1] org, const double[:, ::1] dirs,
            const double[::1] tmin, const double[::1] tmax,
            unsigned char[::1] out_hit, int num_threads=1):
    cdef long r, nr = org.shape[0]
    if num_threads < 1:
        num_threads = 1
    for r in prange(nr, nogil=True, num_threads=num_threads, schedule="static"):
        out_hit[r] = _any_one(lo, hi, left, right, start, count, tri,
                              org, dirs, tmin, tmax, r)
