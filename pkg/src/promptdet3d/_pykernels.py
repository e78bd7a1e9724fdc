"""Pure-Python reference kernels.

Same signatures and semantics as the compiled ``_kernels`` module. Used when
the extension is not built, or when ``PROMPTDET3D_PURE_PYTHON=1``.
"""
from __future__ import annotations

import math

import numpy as np

_EPS = 1e-12


def _local_faces(center_a, rot_a, dims_a, center_b, rot_b):
    """Faces of box A (polygons of 4 vertices) expressed in box B's frame."""
    corners = []
    for i in range(8):
        s = ((i >> 2) & 1) * 2 - 1, ((i >> 1) & 1) * 2 - 1, (i & 1) * 2 - 1
        local = [0.5 * s[k] * dims_a[k] for k in range(3)]
        world = [center_a[r] + sum(rot_a[r][k] * local[k] for k in range(3)) for r in range(3)]
        diff = [world[r] - center_b[r] for r in range(3)]
        # R_b^T (p - c_b)
        corners.append([sum(rot_b[r][k] * diff[r] for r in range(3)) for k in range(3)])
    faces = []
    for axis in range(3):
        a1, a2 = [k for k in range(3) if k != axis]
        for side in (0, 1):
            cyc = []
            for b1, b2 in ((0, 0), (0, 1), (1, 1), (1, 0)):
                bits = [0, 0, 0]
                bits[axis], bits[a1], bits[a2] = side, b1, b2
                cyc.append(list(corners[bits[0] * 4 + bits[1] * 2 + bits[2]]))
            faces.append(cyc)
    return faces


def _clip(faces, axis, bound, sign):
    """Keep the part with sign * x[axis] <= bound. Returns new face list."""
    dists = [[sign * v[axis] - bound for v in f] for f in faces]
    if all(d <= _EPS for ds in dists for d in ds):
        return faces
    if all(d >= -_EPS for ds in dists for d in ds):
        return []
    plane_val = sign * bound
    out = []
    cap = []
    for f, ds in zip(faces, dists):
        n = len(f)
        poly = []
        for i in range(n):
            p, q = f[i], f[(i + 1) % n]
            dp, dq = ds[i], ds[(i + 1) % n]
            if dp <= _EPS:
                poly.append(p)
                if dp >= -_EPS:
                    cap.append(p)
            if (dp < -_EPS and dq > _EPS) or (dp > _EPS and dq < -_EPS):
                t = dp / (dp - dq)
                x = [p[k] + t * (q[k] - p[k]) for k in range(3)]
                x[axis] = plane_val
                poly.append(x)
                cap.append(x)
        if len(poly) >= 3:
            out.append(poly)
    if len(cap) >= 3:
        a1, a2 = [k for k in range(3) if k != axis]
        m1 = sum(p[a1] for p in cap) / len(cap)
        m2 = sum(p[a2] for p in cap) / len(cap)
        cap.sort(key=lambda p: math.atan2(p[a2] - m2, p[a1] - m1))
        uniq = []
        for p in cap:
            if not uniq or abs(p[a1] - uniq[-1][a1]) + abs(p[a2] - uniq[-1][a2]) > 1e-10:
                uniq.append(p)
        if len(uniq) > 1 and abs(uniq[0][a1] - uniq[-1][a1]) + abs(uniq[0][a2] - uniq[-1][a2]) <= 1e-10:
            uniq.pop()
        if len(uniq) >= 3:
            out.append(uniq)
    return out


def _volume(faces):
    pts = [v for f in faces for v in f]
    if not pts:
        return 0.0
    c = [sum(p[k] for p in pts) / len(pts) for k in range(3)]
    vol = 0.0
    for f in faces:
        v0 = f[0]
        nx = ny = nz = 0.0
        for i in range(1, len(f) - 1):
            a = [f[i][k] - v0[k] for k in range(3)]
            b = [f[i + 1][k] - v0[k] for k in range(3)]
            nx += a[1] * b[2] - a[2] * b[1]
            ny += a[2] * b[0] - a[0] * b[2]
            nz += a[0] * b[1] - a[1] * b[0]
        norm = math.sqrt(nx * nx + ny * ny + nz * nz)
        if norm <= 0.0:
            continue
        dist = abs(nx * (c[0] - v0[0]) + ny * (c[1] - v0[1]) + nz * (c[2] - v0[2])) / norm
        vol += norm * 0.5 * dist / 3.0
    return vol


def box_intersection_volume(center_a, rot_a, dims_a, center_b, rot_b, dims_b) -> float:
    """Exact intersection volume of two oriented cuboids.

    Box A is expressed in B's local frame, then clipped by B's six face
    planes; the volume of the remaining convex polytope is summed as
    pyramids from an interior point.
    """
    ca, cb = [float(x) for x in center_a], [float(x) for x in center_b]
    ra = [[float(x) for x in row] for row in np.asarray(rot_a)]
    rb = [[float(x) for x in row] for row in np.asarray(rot_b)]
    da, db = [float(x) for x in dims_a], [float(x) for x in dims_b]
    faces = _local_faces(ca, ra, da, cb, rb)
    for axis in range(3):
        half = 0.5 * db[axis]
        for sign in (1.0, -1.0):
            faces = _clip(faces, axis, half, sign)
            if not faces:
                return 0.0
    return _volume(faces)


def raycast_cuboids(ray_x, ray_y, centers, rotations, dims):
    """Nearest cuboid hit for rays (rx, ry, 1) from the camera origin.

    Returns ``(depth, index, face)``: depth is the z coordinate of the hit
    (inf on miss), index the cuboid id (-1 on miss), face ``2*axis + side``.
    """
    ray_x = np.asarray(ray_x, dtype=np.float64)
    ray_y = np.asarray(ray_y, dtype=np.float64)
    shape = ray_x.shape
    dirs = np.stack([ray_x.ravel(), ray_y.ravel(), np.ones(ray_x.size)], axis=1)
    depth = np.full(ray_x.size, np.inf)
    index = np.full(ray_x.size, -1, dtype=np.int64)
    face = np.full(ray_x.size, -1, dtype=np.int64)
    for n in range(len(centers)):
        rot = np.asarray(rotations[n], dtype=np.float64)
        half = 0.5 * np.asarray(dims[n], dtype=np.float64)
        o = rot.T @ (-np.asarray(centers[n], dtype=np.float64))
        d = dirs @ rot
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - o) / d
            t2 = (half - o) / d
        # rays parallel to a slab: inside the slab -> unbounded, outside -> miss
        parallel = np.abs(d) < 1e-15
        inside = np.abs(o) <= half
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        near_axis = np.argmax(tmin, axis=1)
        t_near = tmin.max(axis=1)
        t_far = tmax.min(axis=1)
        hit = (t_near <= t_far) & (t_near > 0.0) & (t_near < depth)
        side = np.where(np.take_along_axis(t1, near_axis[:, None], 1)[:, 0]
                        <= np.take_along_axis(t2, near_axis[:, None], 1)[:, 0], 0, 1)
        depth = np.where(hit, t_near, depth)
        index = np.where(hit, n, index)
        face = np.where(hit, 2 * near_axis + side, face)
    return depth.reshape(shape), index.reshape(shape), face.reshape(shape)
