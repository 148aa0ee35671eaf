"""Numba ray-casting kernels.

Flat-array BVH traversal and a brute-force variant kept deliberately
independent so the two can cross-check each other. All geometry is float64.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

_STACK_DEPTH = 96
_DET_EPS = 1e-12
_T_MIN = 1e-9


@njit(cache=True, inline="always", error_model="numpy")
def _intersect(ox, oy, oz, dx, dy, dz, ax, ay, az,
               e1x, e1y, e1z, e2x, e2y, e2z):
    """Moller-Trumbore; returns hit parameter t or -1.0 on miss."""
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if -_DET_EPS < det < _DET_EPS:
        return -1.0
    inv_det = 1.0 / det
    sx, sy, sz = ox - ax, oy - ay, oz - az
    u = (sx * px + sy * py + sz * pz) * inv_det
    if u < 0.0 or u > 1.0:
        return -1.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv_det
    if v < 0.0 or u + v > 1.0:
        return -1.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
    if t <= _T_MIN:
        return -1.0
    return t


@njit(cache=True, parallel=True, error_model="numpy")
def cast_rays_bvh(origins, dirs, node_min, node_max, node_left, node_right,
                  node_first, node_count, perm, v0, e1, e2, out_t, out_tri):
    n = origins.shape[0]
    for r in prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx
        iy = 1.0 / dy
        iz = 1.0 / dz
        best_t = np.inf
        best_tri = -1
        stack = np.empty(_STACK_DEPTH, dtype=np.int32)
        sp = 0
        stack[0] = 0
        while sp >= 0:
            node = stack[sp]
            sp -= 1
            # slab test
            t1 = (node_min[node, 0] - ox) * ix
            t2 = (node_max[node, 0] - ox) * ix
            tmin = min(t1, t2)
            tmax = max(t1, t2)
            t1 = (node_min[node, 1] - oy) * iy
            t2 = (node_max[node, 1] - oy) * iy
            tmin = max(tmin, min(t1, t2))
            tmax = min(tmax, max(t1, t2))
            t1 = (node_min[node, 2] - oz) * iz
            t2 = (node_max[node, 2] - oz) * iz
            tmin = max(tmin, min(t1, t2))
            tmax = min(tmax, max(t1, t2))
            if tmax < max(tmin, 0.0) or tmin > best_t:
                continue
            cnt = node_count[node]
            if cnt > 0:
                first = node_first[node]
                for k in range(first, first + cnt):
                    tri = perm[k]
                    t = _intersect(ox, oy, oz, dx, dy, dz,
                                   v0[tri, 0], v0[tri, 1], v0[tri, 2],
                                   e1[tri, 0], e1[tri, 1], e1[tri, 2],
                                   e2[tri, 0], e2[tri, 1], e2[tri, 2])
                    if t > 0.0 and t < best_t:
                        best_t = t
                        best_tri = tri
            else:
                sp += 1
                stack[sp] = node_left[node]
                sp += 1
                stack[sp] = node_right[node]
        out_t[r] = best_t if best_tri >= 0 else 0.0
        out_tri[r] = best_tri


@njit(cache=True, parallel=True, error_model="numpy")
def assign_nearest(points, centroids, out_label, out_d2):
    """Nearest centroid per point; ties go to the lower centroid index."""
    n = points.shape[0]
    k = centroids.shape[0]
    for i in prange(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = 0
        best_d = np.inf
        for c in range(k):
            dx = px - centroids[c, 0]
            dy = py - centroids[c, 1]
            dz = pz - centroids[c, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best_d:
                best_d = d
                best = c
        out_label[i] = best
        out_d2[i] = best_d


@njit(cache=True, parallel=True, error_model="numpy")
def nearest_clusters(points, centroids, out):
    """Per point, the out.shape[1] nearest centroid ids, nearest first."""
    n = points.shape[0]
    k = centroids.shape[0]
    p = out.shape[1]
    for i in prange(n):
        d2 = np.empty(k, dtype=np.float64)
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        for c in range(k):
            dx = px - centroids[c, 0]
            dy = py - centroids[c, 1]
            dz = pz - centroids[c, 2]
            d2[c] = dx * dx + dy * dy + dz * dz
        for j in range(p):
            best = 0
            best_d = np.inf
            for c in range(k):
                if d2[c] < best_d:
                    best_d = d2[c]
                    best = c
            out[i, j] = best
            d2[best] = np.inf


@njit(cache=True, parallel=True, error_model="numpy")
def cast_rays_brute(origins, dirs, v0, e1, e2, out_t, out_tri):
    n = origins.shape[0]
    m = v0.shape[0]
    for r in prange(n):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best_t = np.inf
        best_tri = -1
        for tri in range(m):
            t = _intersect(ox, oy, oz, dx, dy, dz,
                           v0[tri, 0], v0[tri, 1], v0[tri, 2],
                           e1[tri, 0], e1[tri, 1], e1[tri, 2],
                           e2[tri, 0], e2[tri, 1], e2[tri, 2])
            if t > 0.0 and t < best_t:
                best_t = t
                best_tri = tri
        out_t[r] = best_t if best_tri >= 0 else 0.0
        out_tri[r] = best_tri
