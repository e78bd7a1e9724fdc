# cython: language_level=3
"""Compiled kernels: oriented-cuboid intersection volume and cuboid ray casting.

Mirrors ``_pykernels`` exactly; see that module for the reference semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport atan2, fabs, sqrt, INFINITY

cnp.import_array()

DEF MAXF = 16
DEF MAXV = 24
DEF MAXC = 96
DEF EPS = 1e-12
DEF DEDUP = 1e-10


cdef struct Poly:
    int nf
    int nv[MAXF]
    double v[MAXF][MAXV][3]


cdef void _faces(double* ca, double* ra, double* da, double* cb, double* rb, Poly* P) noexcept nogil:
    cdef double corners[8][3]
    cdef double local[3]
    cdef double diff[3]
    cdef double w
    cdef int i, r, k, axis, side, j, a1, a2, idx
    cdef int bits[3]
    cdef int cyc1[4]
    cdef int cyc2[4]
    cyc1[0] = 0; cyc1[1] = 0; cyc1[2] = 1; cyc1[3] = 1
    cyc2[0] = 0; cyc2[1] = 1; cyc2[2] = 1; cyc2[3] = 0
    for i in range(8):
        local[0] = 0.5 * (((i >> 2) & 1) * 2 - 1) * da[0]
        local[1] = 0.5 * (((i >> 1) & 1) * 2 - 1) * da[1]
        local[2] = 0.5 * ((i & 1) * 2 - 1) * da[2]
        for r in range(3):
            w = ca[r]
            for k in range(3):
                w += ra[r * 3 + k] * local[k]
            diff[r] = w - cb[r]
        for k in range(3):
            w = 0.0
            for r in range(3):
                w += rb[r * 3 + k] * diff[r]
            corners[i][k] = w
    P.nf = 0
    for axis in range(3):
        if axis == 0:
            a1 = 1; a2 = 2
        elif axis == 1:
            a1 = 0; a2 = 2
        else:
            a1 = 0; a2 = 1
        for side in range(2):
            for j in range(4):
                bits[axis] = side
                bits[a1] = cyc1[j]
                bits[a2] = cyc2[j]
                idx = bits[0] * 4 + bits[1] * 2 + bits[2]
                for k in range(3):
                    P.v[P.nf][j][k] = corners[idx][k]
            P.nv[P.nf] = 4
            P.nf += 1


cdef int _clip(Poly* P, Poly* Q, int axis, double bound, double sgn) noexcept nogil:
    """Clip P by sgn * x[axis] <= bound into Q. Returns 0 if empty, 1 if unchanged, 2 if clipped."""
    cdef int f, i, n, k, m, a1, a2, ncap, nu, j, any_in, any_out
    cdef double dp, dq, t, m1, m2, tmp
    cdef double cap[MAXC][3]
    cdef double ang[MAXC]
    cdef double plane_val = sgn * bound
    any_in = 0
    any_out = 0
    for f in range(P.nf):
        for i in range(P.nv[f]):
            dp = sgn * P.v[f][i][axis] - bound
            if dp > EPS:
                any_out = 1
            if dp < -EPS:
                any_in = 1
    if not any_out:
        Q[0] = P[0]
        return 1
    if not any_in:
        Q.nf = 0
        return 0
    Q.nf = 0
    ncap = 0
    for f in range(P.nf):
        n = P.nv[f]
        m = 0
        for i in range(n):
            j = (i + 1) % n
            dp = sgn * P.v[f][i][axis] - bound
            dq = sgn * P.v[f][j][axis] - bound
            if dp <= EPS:
                for k in range(3):
                    Q.v[Q.nf][m][k] = P.v[f][i][k]
                m += 1
                if dp >= -EPS and ncap < MAXC:
                    for k in range(3):
                        cap[ncap][k] = P.v[f][i][k]
                    ncap += 1
            if (dp < -EPS and dq > EPS) or (dp > EPS and dq < -EPS):
                t = dp / (dp - dq)
                for k in range(3):
                    Q.v[Q.nf][m][k] = P.v[f][i][k] + t * (P.v[f][j][k] - P.v[f][i][k])
                Q.v[Q.nf][m][axis] = plane_val
                if ncap < MAXC:
                    for k in range(3):
                        cap[ncap][k] = Q.v[Q.nf][m][k]
                    ncap += 1
                m += 1
        if m >= 3:
            Q.nv[Q.nf] = m
            Q.nf += 1
    if ncap >= 3 and Q.nf < MAXF:
        if axis == 0:
            a1 = 1; a2 = 2
        elif axis == 1:
            a1 = 0; a2 = 2
        else:
            a1 = 0; a2 = 1
        m1 = 0.0
        m2 = 0.0
        for i in range(ncap):
            m1 += cap[i][a1]
            m2 += cap[i][a2]
        m1 /= ncap
        m2 /= ncap
        for i in range(ncap):
            ang[i] = atan2(cap[i][a2] - m2, cap[i][a1] - m1)
        # insertion sort (stable, like the Python reference)
        for i in range(1, ncap):
            j = i
            while j > 0 and ang[j - 1] > ang[j]:
                tmp = ang[j]; ang[j] = ang[j - 1]; ang[j - 1] = tmp
                for k in range(3):
                    tmp = cap[j][k]; cap[j][k] = cap[j - 1][k]; cap[j - 1][k] = tmp
                j -= 1
        nu = 0
        for i in range(ncap):
            if nu == 0 or fabs(cap[i][a1] - Q.v[Q.nf][nu - 1][a1]) + fabs(cap[i][a2] - Q.v[Q.nf][nu - 1][a2]) > DEDUP:
                if nu < MAXV:
                    for k in range(3):
                        Q.v[Q.nf][nu][k] = cap[i][k]
                    nu += 1
        if nu > 1 and fabs(Q.v[Q.nf][0][a1] - Q.v[Q.nf][nu - 1][a1]) + fabs(Q.v[Q.nf][0][a2] - Q.v[Q.nf][nu - 1][a2]) <= DEDUP:
            nu -= 1
        if nu >= 3:
            Q.nv[Q.nf] = nu
            Q.nf += 1
    return 2


cdef double _volume(Poly* P) noexcept nogil:
    cdef double c[3]
    cdef double a[3]
    cdef double b[3]
    cdef double nx, ny, nz, norm, dist, vol
    cdef int f, i, k, cnt
    c[0] = 0.0; c[1] = 0.0; c[2] = 0.0
    cnt = 0
    for f in range(P.nf):
        for i in range(P.nv[f]):
            for k in range(3):
                c[k] += P.v[f][i][k]
            cnt += 1
    if cnt == 0:
        return 0.0
    for k in range(3):
        c[k] /= cnt
    vol = 0.0
    for f in range(P.nf):
        nx = 0.0; ny = 0.0; nz = 0.0
        for i in range(1, P.nv[f] - 1):
            for k in range(3):
                a[k] = P.v[f][i][k] - P.v[f][0][k]
                b[k] = P.v[f][i + 1][k] - P.v[f][0][k]
            nx += a[1] * b[2] - a[2] * b[1]
            ny += a[2] * b[0] - a[0] * b[2]
            nz += a[0] * b[1] - a[1] * b[0]
        norm = sqrt(nx * nx + ny * ny + nz * nz)
        if norm <= 0.0:
            continue
        dist = fabs(nx * (c[0] - P.v[f][0][0]) + ny * (c[1] - P.v[f][0][1]) + nz * (c[2] - P.v[f][0][2])) / norm
        vol += norm * 0.5 * dist / 3.0
    return vol


cdef double _intersection(double* ca, double* ra, double* da, double* cb, double* rb, double* db) noexcept nogil:
    cdef Poly A
    cdef Poly B
    cdef Poly* cur = &A
    cdef Poly* nxt = &B
    cdef Poly* swap
    cdef int axis, s
    cdef double sgn
    _faces(ca, ra, da, cb, rb, cur)
    for axis in range(3):
        for s in range(2):
            sgn = 1.0 if s == 0 else -1.0
            if _clip(cur, nxt, axis, 0.5 * db[axis], sgn) == 0:
                return 0.0
            swap = cur; cur = nxt; nxt = swap
    return _volume(cur)


def box_intersection_volume(center_a, rot_a, dims_a, center_b, rot_b, dims_b):
    """Exact intersection volume of two oriented cuboids."""
    cdef double[::1] ca = np.ascontiguousarray(center_a, dtype=np.float64).ravel()
    cdef double[::1] ra = np.ascontiguousarray(rot_a, dtype=np.float64).ravel()
    cdef double[::1] da = np.ascontiguousarray(dims_a, dtype=np.float64).ravel()
    cdef double[::1] cb = np.ascontiguousarray(center_b, dtype=np.float64).ravel()
    cdef double[::1] rb = np.ascontiguousarray(rot_b, dtype=np.float64).ravel()
    cdef double[::1] db = np.ascontiguousarray(dims_b, dtype=np.float64).ravel()
    return _intersection(&ca[0], &ra[0], &da[0], &cb[0], &rb[0], &db[0])


def raycast_cuboids(ray_x, ray_y, centers, rotations, dims):
    """Nearest cuboid hit for rays (rx, ry, 1) from the camera origin."""
    rx_arr = np.ascontiguousarray(ray_x, dtype=np.float64)
    shape = rx_arr.shape
    cdef double[::1] rx = rx_arr.ravel()
    cdef double[::1] ry = np.ascontiguousarray(ray_y, dtype=np.float64).ravel()
    cdef double[:, ::1] cen = np.ascontiguousarray(np.reshape(centers, (-1, 3)), dtype=np.float64)
    cdef double[:, :, ::1] rot = np.ascontiguousarray(np.reshape(rotations, (-1, 3, 3)), dtype=np.float64)
    cdef double[:, ::1] dim = np.ascontiguousarray(np.reshape(dims, (-1, 3)), dtype=np.float64)
    cdef Py_ssize_t npix = rx.shape[0]
    cdef Py_ssize_t nbox = cen.shape[0]
    depth_arr = np.full(npix, np.inf)
    index_arr = np.full(npix, -1, dtype=np.int64)
    face_arr = np.full(npix, -1, dtype=np.int64)
    cdef double[::1] depth = depth_arr
    cdef long long[::1] index = index_arr
    cdef long long[::1] face = face_arr
    cdef double o[3]
    cdef double d[3]
    cdef double h[3]
    cdef double w[3]
    cdef double t1, t2, lo, hi, t_near, t_far
    cdef int k, r, near_axis, near_side, side
    cdef Py_ssize_t p, n
    with nogil:
        for n in range(nbox):
            for k in range(3):
                h[k] = 0.5 * dim[n, k]
                o[k] = 0.0
                for r in range(3):
                    o[k] -= rot[n, r, k] * cen[n, r]
            for p in range(npix):
                w[0] = rx[p]; w[1] = ry[p]; w[2] = 1.0
                t_near = -INFINITY
                t_far = INFINITY
                near_axis = 0
                near_side = 0
                for k in range(3):
                    d[k] = rot[n, 0, k] * w[0] + rot[n, 1, k] * w[1] + rot[n, 2, k] * w[2]
                    if fabs(d[k]) < 1e-15:
                        if fabs(o[k]) <= h[k]:
                            lo = -INFINITY
                            hi = INFINITY
                        else:
                            lo = INFINITY
                            hi = -INFINITY
                        side = 1
                    else:
                        t1 = (-h[k] - o[k]) / d[k]
                        t2 = (h[k] - o[k]) / d[k]
                        if t1 <= t2:
                            lo = t1; hi = t2; side = 0
                        else:
                            lo = t2; hi = t1; side = 1
                    if lo > t_near:
                        t_near = lo
                        near_axis = k
                        near_side = side
                    if hi < t_far:
                        t_far = hi
                if t_near <= t_far and t_near > 0.0 and t_near < depth[p]:
                    depth[p] = t_near
                    index[p] = n
                    face[p] = 2 * near_axis + near_side
    return depth_arr.reshape(shape), index_arr.reshape(shape), face_arr.reshape(shape)
