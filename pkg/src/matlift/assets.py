"""Procedural demo assets.

Builders return `Mesh` objects with per-vertex UVs laid out in disjoint
chart rectangles so the whole asset bakes into one atlas.
"""

from __future__ import annotations

import math

import numpy as np

from .scene import Mesh


def _finish(vertices, uvs, triangles, materials, material_count, names) -> Mesh:
    v = np.asarray(vertices, dtype=np.float64)
    t = np.asarray(triangles, dtype=np.int32)
    m = np.asarray(materials, dtype=np.int32)
    # drop degenerate triangles (pole fans on lat-lon grids)
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    keep = area2 > 1e-12
    return Mesh(
        vertices=v,
        triangles=t[keep],
        material_ids=m[keep],
        material_count=material_count,
        uv=np.asarray(uvs, dtype=np.float64),
        material_names=tuple(names),
    )


def _chart(u0: float, v0: float, u1: float, v1: float):
    def remap(u: float, v: float) -> tuple[float, float]:
        return (u0 + u * (u1 - u0), v0 + v * (v1 - v0))
    return remap


def sphere_part(center, radius: float, material: int, chart,
                n_lat: int = 16, n_lon: int = 24):
    """Lat-lon sphere grid; pole rows are uv-split per column."""
    cx, cy, cz = center
    verts, uvs = [], []
    for i in range(n_lat + 1):
        theta = math.pi * i / n_lat  # 0 at +Z pole
        for j in range(n_lon + 1):
            phi = 2.0 * math.pi * j / n_lon
            x = radius * math.sin(theta) * math.cos(phi)
            y = radius * math.sin(theta) * math.sin(phi)
            z = radius * math.cos(theta)
            verts.append((cx + x, cy + y, cz + z))
            uvs.append(chart(j / n_lon, 1.0 - i / n_lat))
    tris = []
    cols = n_lon + 1
    for i in range(n_lat):
        for j in range(n_lon):
            a = i * cols + j
            b = a + 1
            c = a + cols
            d = c + 1
            tris.append((a, c, b))
            tris.append((b, c, d))
    return verts, uvs, tris, [material] * len(tris)


def box_part(center, half, material: int, chart):
    """Axis-aligned box; six faces in a 3 x 2 grid inside the chart."""
    cx, cy, cz = center
    hx, hy, hz = half
    # face: (normal axis, sign, u axis, v axis)
    faces = [
        (0, +1, 1, 2), (0, -1, 1, 2),
        (1, +1, 0, 2), (1, -1, 0, 2),
        (2, +1, 0, 1), (2, -1, 0, 1),
    ]
    half_arr = (hx, hy, hz)
    centre = (cx, cy, cz)
    verts, uvs, tris, mats = [], [], [], []
    for fi, (axis, sign, ua, va) in enumerate(faces):
        cell_u, cell_v = fi % 3, fi // 3
        sub = _chart(cell_u / 3 + 0.01, cell_v / 2 + 0.01,
                     (cell_u + 1) / 3 - 0.01, (cell_v + 1) / 2 - 0.01)
        base = len(verts)
        for du, dv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            p = [0.0, 0.0, 0.0]
            p[axis] = centre[axis] + sign * half_arr[axis]
            p[ua] = centre[ua] + du * half_arr[ua]
            p[va] = centre[va] + dv * half_arr[va]
            verts.append(tuple(p))
            su, sv = sub((du + 1) / 2, (dv + 1) / 2)
            uvs.append(chart(su, sv))
        if sign > 0:
            quads = [(base, base + 1, base + 2), (base, base + 2, base + 3)]
        else:
            quads = [(base, base + 2, base + 1), (base, base + 3, base + 2)]
        tris.extend(quads)
        mats.extend([material, material])
    return verts, uvs, tris, mats


def cylinder_part(center, radius: float, height: float, material: int, chart,
                  n_seg: int = 24):
    """Capped cylinder: side sheet in the lower chart half, caps above."""
    cx, cy, cz = center
    verts, uvs, tris, mats = [], [], [], []
    z0, z1 = cz - height / 2.0, cz + height / 2.0
    # side sheet, seam duplicated
    for j in range(n_seg + 1):
        phi = 2.0 * math.pi * j / n_seg
        x, y = cx + radius * math.cos(phi), cy + radius * math.sin(phi)
        verts.append((x, y, z0))
        uvs.append(chart(j / n_seg, 0.02))
        verts.append((x, y, z1))
        uvs.append(chart(j / n_seg, 0.48))
    for j in range(n_seg):
        a = 2 * j
        tris.append((a, a + 2, a + 1))
        tris.append((a + 1, a + 2, a + 3))
        mats.extend([material, material])
    # caps as fans, disc charts in the upper half
    for sign, z, cu in ((+1, z1, 0.25), (-1, z0, 0.75)):
        centre_idx = len(verts)
        verts.append((cx, cy, z))
        uvs.append(chart(cu, 0.75))
        ring = []
        for j in range(n_seg):
            phi = 2.0 * math.pi * j / n_seg
            verts.append((cx + radius * math.cos(phi), cy + radius * math.sin(phi), z))
            uvs.append(chart(cu + 0.2 * math.cos(phi), 0.75 + 0.2 * math.sin(phi)))
            ring.append(centre_idx + 1 + j)
        for j in range(n_seg):
            a, b = ring[j], ring[(j + 1) % n_seg]
            tris.append((centre_idx, a, b) if sign > 0 else (centre_idx, b, a))
            mats.append(material)
    return verts, uvs, tris, mats


def uv_sphere_mesh(center=(0.0, 0.0, 0.0), radius: float = 1.0,
                   n_lat: int = 32, n_lon: int = 64,
                   material_name: str = "sphere") -> Mesh:
    """Single-material lat-lon sphere; raise n_lat/n_lon for tighter
    chordal deviation from the ideal sphere."""
    verts, uvs, tris, mats = sphere_part(center, radius, 0,
                                         _chart(0.02, 0.02, 0.98, 0.98),
                                         n_lat=n_lat, n_lon=n_lon)
    return _finish(verts, uvs, tris, mats, 1, (material_name,))


def three_material_demo() -> Mesh:
    """Three spatially separated parts, one material each.

    Used by tests, the CLI demo command and the UI walkthrough: a sphere,
    a box and a cylinder spread along X inside a ~2.6-unit bounding radius.
    """
    parts = [
        sphere_part((-1.7, 0.0, 0.0), 0.9, 0, _chart(0.02, 0.02, 0.31, 0.98)),
        box_part((0.0, 0.0, 0.0), (0.65, 0.65, 0.65), 1, _chart(0.35, 0.02, 0.64, 0.98)),
        cylinder_part((1.7, 0.0, 0.0), 0.55, 1.7, 2, _chart(0.68, 0.02, 0.97, 0.98)),
    ]
    verts, uvs, tris, mats = [], [], [], []
    for pv, pu, pt, pm in parts:
        base = len(verts)
        verts.extend(pv)
        uvs.extend(pu)
        tris.extend((a + base, b + base, c + base) for a, b, c in pt)
        mats.extend(pm)
    return _finish(verts, uvs, tris, mats, 3, ("shell", "core", "column"))


def two_quad_scene(separation: float = 3.0, size: float = 1.0) -> Mesh:
    """Two fronto-parallel quads at z=0, far apart in x, materials 0 and 1."""
    verts, uvs, tris, mats = [], [], [], []
    for mi, cx in enumerate((-separation / 2.0, separation / 2.0)):
        base = len(verts)
        for dx, dy in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            verts.append((cx + dx * size / 2.0, dy * size / 2.0, 0.0))
            uvs.append(((mi + (dx + 1) / 2 * 0.9 + 0.05) / 2.0, (dy + 1) / 2 * 0.9 + 0.05))
        tris.append((base, base + 1, base + 2))
        tris.append((base, base + 2, base + 3))
        mats.extend([mi, mi])
    return _finish(verts, uvs, tris, mats, 2, ("left", "right"))


def single_quad(size: float = 1.0, material_name: str = "default") -> Mesh:
    half = size / 2.0
    verts = [(-half, -half, 0.0), (half, -half, 0.0), (half, half, 0.0), (-half, half, 0.0)]
    uvs = [(0.05, 0.05), (0.95, 0.05), (0.95, 0.95), (0.05, 0.95)]
    return _finish(verts, uvs, [(0, 1, 2), (0, 2, 3)], [0, 0], 1, (material_name,))
