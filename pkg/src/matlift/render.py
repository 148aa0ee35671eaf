"""CPU ray-cast renderer and UV-atlas baking.

Produces RGB, depth and material-ID rasters for any pinhole camera. Depth is
the ray parameter along the *normalized* pixel ray (not z-depth), so
back-projection is exactly `position + depth * direction`. Shading is flat
Lambert with a headlight (light along the view direction), floored at 0.2,
which keeps renders deterministic and testable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels, formats
from .errors import ValidationError
from .scene import Camera, Mesh

LAMBERT_FLOOR = 0.2
_LEAF_SIZE = 4

# distinct base colors per material id, cycling (sRGB bytes)
MATERIAL_PALETTE = np.array([
    (204, 59, 59),
    (66, 153, 221),
    (235, 200, 70),
    (92, 185, 96),
    (170, 102, 221),
    (230, 135, 60),
    (120, 210, 200),
    (214, 214, 214),
], dtype=np.uint8)


def material_color(material_id: int) -> tuple[int, int, int]:
    c = MATERIAL_PALETTE[material_id % len(MATERIAL_PALETTE)]
    return int(c[0]), int(c[1]), int(c[2])


@dataclass(frozen=True, eq=False)
class Bvh:
    """Flat axis-aligned BVH over mesh triangles (median split)."""

    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_first: np.ndarray
    node_count: np.ndarray
    perm: np.ndarray  # triangle ids, leaves own contiguous slices
    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    tri_normal: np.ndarray  # unit geometric normals (zero for degenerate)

    @property
    def node_count_total(self) -> int:
        return self.node_min.shape[0]


def build_bvh(mesh: Mesh) -> Bvh:
    """Median-split BVH; traversal results match brute-force iteration."""
    t = mesh.triangles
    if t.shape[0] == 0:
        raise ValidationError("cannot build a BVH over an empty mesh")
    a = mesh.vertices[t[:, 0]]
    b = mesh.vertices[t[:, 1]]
    c = mesh.vertices[t[:, 2]]
    tri_min = np.minimum(np.minimum(a, b), c)
    tri_max = np.maximum(np.maximum(a, b), c)
    centroids = (tri_min + tri_max) / 2.0

    n_tris = t.shape[0]
    perm = np.arange(n_tris, dtype=np.int64)
    node_min, node_max = [], []
    node_left, node_right, node_first, node_cnt = [], [], [], []

    def new_node() -> int:
        node_min.append(None)
        node_max.append(None)
        node_left.append(-1)
        node_right.append(-1)
        node_first.append(-1)
        node_cnt.append(0)
        return len(node_min) - 1

    # iterative median split over perm slices
    root = new_node()
    stack = [(root, 0, n_tris)]
    while stack:
        node, lo, hi = stack.pop()
        ids = perm[lo:hi]
        node_min[node] = tri_min[ids].min(axis=0)
        node_max[node] = tri_max[ids].max(axis=0)
        count = hi - lo
        if count <= _LEAF_SIZE:
            node_first[node] = lo
            node_cnt[node] = count
            continue
        cen = centroids[ids]
        extent = cen.max(axis=0) - cen.min(axis=0)
        axis = int(np.argmax(extent))
        order = np.argsort(cen[:, axis], kind="stable")
        perm[lo:hi] = ids[order]
        mid = lo + count // 2
        left = new_node()
        right = new_node()
        node_left[node] = left
        node_right[node] = right
        stack.append((left, lo, mid))
        stack.append((right, mid, hi))

    normal = np.cross(b - a, c - a)
    norms = np.linalg.norm(normal, axis=1, keepdims=True)
    unit = np.divide(normal, norms, out=np.zeros_like(normal), where=norms > 0)

    return Bvh(
        node_min=np.ascontiguousarray(np.stack(node_min), dtype=np.float64),
        node_max=np.ascontiguousarray(np.stack(node_max), dtype=np.float64),
        node_left=np.asarray(node_left, dtype=np.int32),
        node_right=np.asarray(node_right, dtype=np.int32),
        node_first=np.asarray(node_first, dtype=np.int64),
        node_count=np.asarray(node_cnt, dtype=np.int32),
        perm=perm,
        v0=np.ascontiguousarray(a, dtype=np.float64),
        e1=np.ascontiguousarray(b - a, dtype=np.float64),
        e2=np.ascontiguousarray(c - a, dtype=np.float64),
        tri_normal=unit,
    )


def cast_rays(bvh: Bvh, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit per ray. Returns (t, triangle id); misses get (0.0, -1)."""
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    out_t = np.empty(n, dtype=np.float64)
    out_tri = np.empty(n, dtype=np.int64)
    _kernels.cast_rays_bvh(
        origins, dirs, bvh.node_min, bvh.node_max, bvh.node_left, bvh.node_right,
        bvh.node_first, bvh.node_count, bvh.perm, bvh.v0, bvh.e1, bvh.e2,
        out_t, out_tri,
    )
    return out_t, out_tri


def cast_rays_brute(mesh: Mesh, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force all-triangles casting; the BVH's independent cross-check."""
    t = mesh.triangles
    a = np.ascontiguousarray(mesh.vertices[t[:, 0]], dtype=np.float64)
    b = mesh.vertices[t[:, 1]]
    c = mesh.vertices[t[:, 2]]
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    n = origins.shape[0]
    out_t = np.empty(n, dtype=np.float64)
    out_tri = np.empty(n, dtype=np.int64)
    _kernels.cast_rays_brute(
        origins, dirs, a,
        np.ascontiguousarray(b - a, dtype=np.float64),
        np.ascontiguousarray(c - a, dtype=np.float64),
        out_t, out_tri,
    )
    return out_t, out_tri


# ---------------------------------------------------------------------------
# Cameras -> rays

def camera_rays(camera: Camera) -> np.ndarray:
    """Unit ray directions through every pixel center, shape (H, W, 3).

    Raster x grows right, raster y grows down; the pixel grid spans the
    vertical field of view symmetrically.
    """
    w, h = camera.resolution
    right, up, fwd = camera.basis()
    half_h = np.tan(camera.vertical_fov / 2.0)
    half_w = half_h * w / h
    xs = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    ys = 1.0 - (np.arange(h) + 0.5) / h * 2.0
    u = xs[None, :, None] * half_w * right[None, None, :]
    v = ys[:, None, None] * half_h * up[None, None, :]
    d = fwd[None, None, :] + u + v
    d /= np.linalg.norm(d, axis=2, keepdims=True)
    return d


def pixel_ray(camera: Camera, pixel: tuple[int, int]) -> np.ndarray:
    """Unit direction through a single pixel center."""
    x, y = pixel
    w, h = camera.resolution
    if not (0 <= x < w and 0 <= y < h):
        raise ValidationError(f"pixel {pixel} outside {w}x{h} raster")
    right, up, fwd = camera.basis()
    half_h = np.tan(camera.vertical_fov / 2.0)
    half_w = half_h * w / h
    u = ((x + 0.5) / w * 2.0 - 1.0) * half_w
    v = (1.0 - (y + 0.5) / h * 2.0) * half_h
    d = fwd + u * right + v * up
    return d / np.linalg.norm(d)


def hit_point(camera: Camera, pixel: tuple[int, int], depth: float) -> np.ndarray:
    """Back-project one pixel: position + depth * unit ray direction."""
    if not np.isfinite(depth) or depth < 0.0:
        raise ValidationError(f"invalid depth {depth} at pixel {pixel}")
    return camera.position + depth * pixel_ray(camera, pixel)


# ---------------------------------------------------------------------------
# View bundles

@dataclass(eq=False)
class ViewBundle:
    """All rasters of one rendered view, sharing one camera.

    depth holds the ray parameter where material_id >= 0 and 0.0 elsewhere
    (background); material_id uses -1 for background. similarity, when
    present, is in [0, 1] with background forced to 0.
    """

    camera: Camera
    rgb: np.ndarray          # (H, W, 3) uint8
    depth: np.ndarray        # (H, W) float64
    material_id: np.ndarray  # (H, W) int32
    similarity: np.ndarray | None = None  # (H, W) float32

    def __post_init__(self):
        h, w = self.material_id.shape
        if self.rgb.shape != (h, w, 3) or self.depth.shape != (h, w):
            raise ValidationError("view bundle rasters disagree on resolution")
        if self.similarity is not None and self.similarity.shape != (h, w):
            raise ValidationError("similarity raster resolution mismatch")
        fg = self.material_id >= 0
        if not np.all((self.depth > 0) == fg):
            raise ValidationError("depth must be valid exactly on foreground pixels")

    @property
    def shape(self) -> tuple[int, int]:
        return self.material_id.shape

    @property
    def foreground(self) -> np.ndarray:
        return self.material_id >= 0

    def hit_point(self, pixel: tuple[int, int]) -> np.ndarray:
        x, y = pixel
        if self.material_id[y, x] < 0:
            raise ValidationError(f"pixel {pixel} is background; no depth")
        return hit_point(self.camera, pixel, float(self.depth[y, x]))

    def with_similarity(self, similarity: np.ndarray) -> "ViewBundle":
        sim = np.asarray(similarity, dtype=np.float32)
        return ViewBundle(self.camera, self.rgb, self.depth, self.material_id, sim)

    def save(self, directory: str | Path, view_id: str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        formats.write_png(directory / f"{view_id}.png", self.rgb)
        formats.write_simf(directory / f"{view_id}.depth.simf", self.depth.astype(np.float32))
        formats.write_id_pgm(directory / f"{view_id}.ids.pgm", self.material_id)
        if self.similarity is not None:
            formats.write_simf(directory / f"{view_id}.simf", self.similarity)


def render_view(mesh: Mesh, bvh: Bvh, camera: Camera) -> ViewBundle:
    """One primary ray per pixel center; nearest hit wins."""
    w, h = camera.resolution
    dirs = camera_rays(camera).reshape(-1, 3)
    origins = np.broadcast_to(camera.position, dirs.shape)
    t, tri = cast_rays(bvh, origins, dirs)

    tri_img = tri.reshape(h, w)
    fg = tri_img >= 0
    depth = np.where(fg, t.reshape(h, w), 0.0)
    material = np.where(fg, mesh.material_ids[np.clip(tri_img, 0, None)], -1).astype(np.int32)

    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    if fg.any():
        hit_tris = tri_img[fg]
        normals = bvh.tri_normal[hit_tris]
        d = dirs.reshape(h, w, 3)[fg]
        # headlight: light arrives along the view ray; surfaces are two-sided
        lambert = np.maximum(LAMBERT_FLOOR, np.abs(np.sum(normals * d, axis=1)))
        base = MATERIAL_PALETTE[mesh.material_ids[hit_tris] % len(MATERIAL_PALETTE)]
        rgb[fg] = np.clip(base * lambert[:, None], 0, 255).astype(np.uint8)

    return ViewBundle(camera=camera, rgb=rgb, depth=depth, material_id=material)


# ---------------------------------------------------------------------------
# UV baking

@dataclass(eq=False)
class UvMap:
    """Scalar field baked into the mesh's UV atlas."""

    values: np.ndarray    # (R, R) float32
    coverage: np.ndarray  # (R, R) bool
    resolution: int

    def as_id_map(self) -> np.ndarray:
        ids = np.rint(self.values).astype(np.int32)
        ids[~self.coverage] = -1
        return ids


ValueFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def bake_uv(mesh: Mesh, bvh: Bvh | None, cameras: Sequence[Camera] | None,
            value_fn: ValueFn, resolution: int = 512) -> UvMap:
    """Rasterize triangles in UV space and evaluate value_fn on the surface.

    value_fn(points (N,3), tri_ids (N,)) -> values (N,). Overlapping charts
    resolve last-writer-wins in triangle order. Baking is pure surface
    evaluation; bvh and cameras are accepted for interface symmetry with the
    renderer and may be None.
    """
    if mesh.uv is None:
        raise ValidationError("mesh has no UV coordinates; cannot bake")
    if resolution < 1:
        raise ValidationError("atlas resolution must be >= 1")
    res = int(resolution)
    values = np.zeros((res, res), dtype=np.float32)
    coverage = np.zeros((res, res), dtype=bool)

    uv = mesh.uv
    verts = mesh.vertices
    for ti in range(mesh.triangle_count):
        ia, ib, ic = mesh.triangles[ti]
        ua, ub, uc = uv[ia], uv[ib], uv[ic]
        pa, pb, pc = verts[ia], verts[ib], verts[ic]
        # texel centers inside the uv bbox
        lo = np.minimum(np.minimum(ua, ub), uc)
        hi = np.maximum(np.maximum(ua, ub), uc)
        x0 = max(0, int(np.floor(lo[0] * res - 0.5)))
        x1 = min(res - 1, int(np.ceil(hi[0] * res - 0.5)))
        y0 = max(0, int(np.floor(lo[1] * res - 0.5)))
        y1 = min(res - 1, int(np.ceil(hi[1] * res - 0.5)))
        if x1 < x0 or y1 < y0:
            continue
        xs = (np.arange(x0, x1 + 1) + 0.5) / res
        ys = (np.arange(y0, y1 + 1) + 0.5) / res
        gu, gv = np.meshgrid(xs, ys)
        # barycentric in uv space
        d = (ub[0] - ua[0]) * (uc[1] - ua[1]) - (uc[0] - ua[0]) * (ub[1] - ua[1])
        if d == 0.0:
            continue
        wb = ((gu - ua[0]) * (uc[1] - ua[1]) - (gv - ua[1]) * (uc[0] - ua[0])) / d
        wc = ((gv - ua[1]) * (ub[0] - ua[0]) - (gu - ua[0]) * (ub[1] - ua[1])) / d
        wa = 1.0 - wb - wc
        inside = (wa >= 0) & (wb >= 0) & (wc >= 0)
        if not inside.any():
            continue
        pts = (wa[inside, None] * pa + wb[inside, None] * pb + wc[inside, None] * pc)
        vals = np.asarray(value_fn(pts, np.full(pts.shape[0], ti, dtype=np.int64)),
                          dtype=np.float32)
        yy, xx = np.nonzero(inside)
        values[y0 + yy, x0 + xx] = vals
        coverage[y0 + yy, x0 + xx] = True

    return UvMap(values=values, coverage=coverage, resolution=res)
