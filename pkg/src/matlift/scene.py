"""Mesh and camera model.

Asset ingestion (Wavefront OBJ subset), camera sampling on spheres and
parametric trajectories, manifest subsampling, and greedy spatio-angular
trajectory sorting.

Conventions: right-handed world space, +Z up for sphere/trajectory sampling.
A camera is a pinhole at `position` looking at `look_at` with vertical field
of view `vertical_fov` (radians) and raster `resolution` (width, height).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import MeshLoadError, ValidationError

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0

TRAJECTORY_KINDS = ("zoom_in", "zoom_out", "turntable", "fly_over")


def _as_vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).reshape(3)
    return arr


def normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValidationError("cannot normalize zero vector")
    return v / n


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; immutable after construction."""

    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    vertical_fov: float  # radians
    resolution: tuple[int, int]  # (width, height)

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec3(self.position))
        object.__setattr__(self, "look_at", _as_vec3(self.look_at))
        object.__setattr__(self, "up", normalize(_as_vec3(self.up)))
        w, h = self.resolution
        object.__setattr__(self, "resolution", (int(w), int(h)))
        if np.allclose(self.position, self.look_at):
            raise ValidationError("camera position and look_at coincide")
        if not (0.0 < self.vertical_fov < math.pi):
            raise ValidationError(f"vertical_fov out of (0, pi): {self.vertical_fov}")
        if self.resolution[0] < 1 or self.resolution[1] < 1:
            raise ValidationError(f"resolution must be >= 1x1: {self.resolution}")
        fwd = self.look_at - self.position
        if np.linalg.norm(np.cross(fwd, self.up)) == 0.0:
            raise ValidationError("camera up vector is parallel to the view direction")

    @property
    def forward(self) -> np.ndarray:
        return normalize(self.look_at - self.position)

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (right, up, forward) frame of the camera."""
        fwd = self.forward
        right = normalize(np.cross(fwd, self.up))
        true_up = np.cross(right, fwd)
        return right, true_up, fwd

    def with_resolution(self, resolution: tuple[int, int]) -> "Camera":
        return replace(self, resolution=resolution)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with per-triangle material ids and optional per-vertex UVs."""

    vertices: np.ndarray       # (V, 3) float64
    triangles: np.ndarray      # (T, 3) int32
    material_ids: np.ndarray   # (T,)  int32
    material_count: int
    uv: np.ndarray | None = None   # (V, 2) float64, all-or-none
    material_names: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int32))
        m = np.ascontiguousarray(np.asarray(self.material_ids, dtype=np.int32))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError(f"vertices must be (V,3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValidationError(f"triangles must be (T,3), got {t.shape}")
        if m.shape != (t.shape[0],):
            raise ValidationError("material_ids must have one entry per triangle")
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise ValidationError("triangle index out of range")
        if m.size and (m.min() < 0 or m.max() >= self.material_count):
            raise ValidationError("material id out of range")
        uv = self.uv
        if uv is not None:
            uv = np.ascontiguousarray(np.asarray(uv, dtype=np.float64))
            if uv.shape != (v.shape[0], 2):
                raise ValidationError("uv must be (V,2) matching vertices")
        for arr in (v, t, m) + ((uv,) if uv is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "material_ids", m)
        object.__setattr__(self, "uv", uv)
        if not self.material_names:
            object.__setattr__(
                self, "material_names",
                tuple(f"material_{i}" for i in range(self.material_count)),
            )

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def centroid(self) -> np.ndarray:
        lo, hi = self.bounds()
        return (lo + hi) / 2.0

    def bounding_radius(self) -> float:
        c = self.centroid()
        return float(np.linalg.norm(self.vertices - c, axis=1).max())


@dataclass(frozen=True, eq=False)
class ViewManifest:
    """Ordered set of named views over one asset."""

    cameras: tuple[Camera, ...]
    ids: tuple[str, ...]
    asset: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(self.cameras) != len(self.ids):
            raise ValidationError("one id per camera required")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("view ids must be unique")

    def __len__(self) -> int:
        return len(self.cameras)

    def index_of(self, view_id: str) -> int:
        try:
            return self.ids.index(view_id)
        except ValueError:
            raise ValidationError(f"unknown view id {view_id!r}") from None

    def camera(self, view_id: str) -> Camera:
        return self.cameras[self.index_of(view_id)]

    def save(self, path: str | Path) -> None:
        rows = []
        for vid, cam in zip(self.ids, self.cameras):
            rows.append({
                "id": vid,
                "position": [float(x) for x in cam.position],
                "look_at": [float(x) for x in cam.look_at],
                "up": [float(x) for x in cam.up],
                "fov_deg": math.degrees(cam.vertical_fov),
                "width": cam.resolution[0],
                "height": cam.resolution[1],
            })
        Path(path).write_text(json.dumps(rows, indent=2))

    @classmethod
    def load(cls, path: str | Path, asset: str | None = None) -> "ViewManifest":
        rows = json.loads(Path(path).read_text())
        if not isinstance(rows, list):
            raise ValidationError(f"{path}: camera manifest must be a JSON array")
        cams, ids = [], []
        for row in rows:
            cams.append(Camera(
                position=row["position"], look_at=row["look_at"], up=row["up"],
                vertical_fov=math.radians(row["fov_deg"]),
                resolution=(row["width"], row["height"]),
            ))
            ids.append(str(row["id"]))
        return cls(cameras=tuple(cams), ids=tuple(ids), asset=asset)


# ---------------------------------------------------------------------------
# OBJ ingestion

def load_mesh(path: str | Path) -> Mesh:
    """Parse a Wavefront OBJ subset: v / vt / f with usemtl groups.

    Faces with more than three corners are fan-triangulated. Material ids
    follow first appearance of usemtl names, starting at 0; faces before any
    usemtl get an implicit "default" material. When any face references
    texture coordinates, all faces must; vertices are split per unique
    (position, uv) pair so the result carries per-vertex UVs.
    """
    path = Path(path)
    positions: list[tuple[float, float, float]] = []
    texcoords: list[tuple[float, float]] = []
    material_names: list[str] = []
    current_material = -1  # -1 -> implicit default, resolved lazily
    faces: list[tuple[list[tuple[int, int]], int, int]] = []  # corners, material, line
    any_uv = False

    def material_index(name: str) -> int:
        if name not in material_names:
            material_names.append(name)
        return material_names.index(name)

    with open(path, "r", errors="replace") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshLoadError("vertex needs 3 coordinates", lineno)
                try:
                    positions.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError:
                    raise MeshLoadError(f"bad vertex coordinate in {line!r}", lineno)
            elif tag == "vt":
                if len(parts) < 3:
                    raise MeshLoadError("texture coordinate needs 2 components", lineno)
                try:
                    texcoords.append((float(parts[1]), float(parts[2])))
                except ValueError:
                    raise MeshLoadError(f"bad texture coordinate in {line!r}", lineno)
            elif tag == "usemtl":
                if len(parts) < 2:
                    raise MeshLoadError("usemtl without a material name", lineno)
                current_material = material_index(parts[1])
            elif tag == "f":
                corners = parts[1:]
                if len(corners) < 3:
                    raise MeshLoadError("face needs at least 3 vertices", lineno)
                parsed = []
                for corner in corners:
                    fields = corner.split("/")
                    try:
                        vi = int(fields[0])
                    except ValueError:
                        raise MeshLoadError(f"bad face index {corner!r}", lineno)
                    vi = vi - 1 if vi > 0 else len(positions) + vi
                    if not (0 <= vi < len(positions)):
                        raise MeshLoadError("index out of range", lineno)
                    ti = -1
                    if len(fields) > 1 and fields[1]:
                        try:
                            ti = int(fields[1])
                        except ValueError:
                            raise MeshLoadError(f"bad face index {corner!r}", lineno)
                        ti = ti - 1 if ti > 0 else len(texcoords) + ti
                        if not (0 <= ti < len(texcoords)):
                            raise MeshLoadError("index out of range", lineno)
                        any_uv = True
                    parsed.append((vi, ti))
                if current_material == -1:
                    current_material = material_index("default")
                faces.append((parsed, current_material, lineno))
            # vn, o, g, s, mtllib and friends carry no geometry we use

    if not faces:
        raise MeshLoadError(f"{path}: no faces found")

    # resolve corners; with UVs, split vertices per (position, uv) pair
    vertex_map: dict[tuple[int, int], int] = {}
    out_vertices: list[tuple[float, float, float]] = []
    out_uv: list[tuple[float, float]] = []
    triangles: list[tuple[int, int, int]] = []
    tri_materials: list[int] = []

    def resolve(vi: int, ti: int, lineno: int) -> int:
        if any_uv and ti < 0:
            raise MeshLoadError("face mixes corners with and without UVs", lineno)
        key = (vi, ti)
        idx = vertex_map.get(key)
        if idx is None:
            idx = len(out_vertices)
            vertex_map[key] = idx
            out_vertices.append(positions[vi])
            if any_uv:
                out_uv.append(texcoords[ti])
        return idx

    for corners, material, lineno in faces:
        idxs = [resolve(vi, ti, lineno) for vi, ti in corners]
        for k in range(1, len(idxs) - 1):
            triangles.append((idxs[0], idxs[k], idxs[k + 1]))
            tri_materials.append(material)

    return Mesh(
        vertices=np.array(out_vertices, dtype=np.float64),
        triangles=np.array(triangles, dtype=np.int32),
        material_ids=np.array(tri_materials, dtype=np.int32),
        material_count=len(material_names) if material_names else 1,
        uv=np.array(out_uv, dtype=np.float64) if any_uv else None,
        material_names=tuple(material_names) if material_names else ("default",),
    )


def save_obj(mesh: Mesh, path: str | Path) -> None:
    """Write a mesh back out in the OBJ subset load_mesh understands."""
    lines = ["# matlift asset"]
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    has_uv = mesh.uv is not None
    if has_uv:
        for t in mesh.uv:
            lines.append(f"vt {t[0]:.9g} {t[1]:.9g}")
    order = np.argsort(mesh.material_ids, kind="stable")
    last_material = -1
    for ti in order:
        m = int(mesh.material_ids[ti])
        if m != last_material:
            lines.append(f"usemtl {mesh.material_names[m]}")
            last_material = m
        a, b, c = (int(i) + 1 for i in mesh.triangles[ti])
        if has_uv:
            lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
        else:
            lines.append(f"f {a} {b} {c}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Camera sampling

def _sphere_camera(center: np.ndarray, direction: np.ndarray, radius: float,
                   fov: float, resolution: tuple[int, int]) -> Camera:
    return Camera(
        position=center + radius * direction,
        look_at=center,
        up=(0.0, 0.0, 1.0),
        vertical_fov=fov,
        resolution=resolution,
    )


def fibonacci_cameras(n: int, center, radius: float, fov: float = math.radians(45.0),
                      resolution: tuple[int, int] = (512, 512)) -> list[Camera]:
    """n cameras on the spherical Fibonacci lattice, all looking at center.

    Directions use the offset form z_i = 1 - (2i+1)/n with golden-angle
    azimuth, which keeps samples off the poles.
    """
    if n < 1:
        raise ValidationError(f"need at least one camera, got n={n}")
    if radius <= 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    center = _as_vec3(center)
    cams = []
    for i in range(n):
        z = 1.0 - (2.0 * i + 1.0) / n
        az = 2.0 * math.pi * i * (1.0 - 1.0 / GOLDEN_RATIO)
        r = math.sqrt(max(0.0, 1.0 - z * z))
        direction = np.array([r * math.cos(az), r * math.sin(az), z])
        cams.append(_sphere_camera(center, direction, radius, fov, resolution))
    return cams


def random_cameras(n: int, center, radius: float, fov: float = math.radians(45.0),
                   resolution: tuple[int, int] = (512, 512),
                   seed: int = 0) -> list[Camera]:
    """n seeded uniformly-random sphere cameras looking at center."""
    if n < 1:
        raise ValidationError(f"need at least one camera, got n={n}")
    center = _as_vec3(center)
    rng = np.random.default_rng(seed)
    cams = []
    while len(cams) < n:
        d = rng.normal(size=3)
        norm = np.linalg.norm(d)
        if norm < 1e-9 or abs(d[2] / norm) > 0.999:  # skip poles, up is +Z
            continue
        cams.append(_sphere_camera(center, d / norm, radius, fov, resolution))
    return cams


def trajectory_cameras(kind: str, n_frames: int, center, *,
                       radius: float | None = None,
                       radius_start: float | None = None,
                       radius_end: float | None = None,
                       elevation_deg: float = 30.0,
                       azimuth_deg: float = 0.0,
                       elevation_start_deg: float = 5.0,
                       elevation_end_deg: float = 85.0,
                       fov: float = math.radians(45.0),
                       resolution: tuple[int, int] = (512, 512)) -> list[Camera]:
    """Smooth parametric camera path of one of four kinds.

    zoom_in / zoom_out interpolate the orbit radius (decreasing / increasing),
    turntable sweeps azimuth over a full revolution at fixed elevation,
    fly_over sweeps elevation from near-horizon to near-pole at fixed azimuth.
    All cameras look at center.
    """
    if kind not in TRAJECTORY_KINDS:
        raise ValidationError(f"unknown trajectory kind {kind!r}; expected one of {TRAJECTORY_KINDS}")
    if n_frames < 2:
        raise ValidationError(f"trajectory needs at least 2 frames, got {n_frames}")
    center = _as_vec3(center)

    def direction(elev_deg: float, az_deg: float) -> np.ndarray:
        el, az = math.radians(elev_deg), math.radians(az_deg)
        return np.array([
            math.cos(el) * math.cos(az),
            math.cos(el) * math.sin(az),
            math.sin(el),
        ])

    if kind in ("zoom_in", "zoom_out"):
        r0 = radius_start if radius_start is not None else (radius or 4.0)
        r1 = radius_end if radius_end is not None else r0 / 2.0
        if r0 <= 0 or r1 <= 0:
            raise ValidationError("zoom radii must be positive")
        hi, lo = max(r0, r1), min(r0, r1)
        d = direction(elevation_deg, azimuth_deg)
        radii = np.linspace(hi, lo, n_frames)  # zoom_in: far to near
        cams = [_sphere_camera(center, d, float(r), fov, resolution) for r in radii]
        return cams if kind == "zoom_in" else cams[::-1]

    r = radius if radius is not None else 4.0
    if r <= 0:
        raise ValidationError("radius must be positive")
    if kind == "turntable":
        cams = []
        for i in range(n_frames):
            az = azimuth_deg + 360.0 * i / n_frames
            cams.append(_sphere_camera(center, direction(elevation_deg, az), r, fov, resolution))
        return cams
    # fly_over
    elevations = np.linspace(elevation_start_deg, min(elevation_end_deg, 89.0), n_frames)
    return [
        _sphere_camera(center, direction(float(el), azimuth_deg), r, fov, resolution)
        for el in elevations
    ]


# ---------------------------------------------------------------------------
# Trajectory sorting and subsampling

def camera_distance(a: Camera, b: Camera, diag: float) -> float:
    """Spatio-angular distance: normalized position gap plus angle/pi."""
    pos = float(np.linalg.norm(a.position - b.position))
    cos_angle = float(np.clip(np.dot(a.forward, b.forward), -1.0, 1.0))
    angular = math.acos(cos_angle) / math.pi
    return (pos / diag if diag > 0 else 0.0) + angular


def _positions_diag(cameras: Sequence[Camera]) -> float:
    pos = np.array([c.position for c in cameras])
    return float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))


def sort_camera_order(cameras: Sequence[Camera], initial: int) -> list[int]:
    """Index form of :func:`sort_cameras`: greedy chain starting at `initial`."""
    n = len(cameras)
    if not (0 <= initial < n):
        raise ValidationError(f"initial index {initial} out of range")
    if n == 1:
        return [initial]
    diag = _positions_diag(cameras)
    remaining = [i for i in range(n) if i != initial]
    order = [initial]
    current = initial
    while remaining:
        dists = [camera_distance(cameras[current], cameras[i], diag) for i in remaining]
        best = int(np.argmin(dists))  # argmin returns the first minimum
        current = remaining.pop(best)
        order.append(current)
    return order


def sort_cameras(initial: Camera, others: Iterable[Camera]) -> list[Camera]:
    """Greedy nearest-neighbor chain over spatio-angular distances.

    Starts at `initial`; at each step appends the unvisited camera closest to
    the current one. Ties break toward earlier input order.
    """
    cameras = [initial] + list(others)
    return [cameras[i] for i in sort_camera_order(cameras, 0)]


def subsample_views(manifest: ViewManifest, fraction: float) -> ViewManifest:
    """Keep ceil(fraction * n) views by deterministic stride over input order."""
    if len(manifest) == 0:
        raise ValidationError("cannot subsample an empty manifest")
    if not (0.0 < fraction <= 1.0):
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    n = len(manifest)
    count = math.ceil(fraction * n)
    idx = [int(math.floor(j * n / count)) for j in range(count)]
    return ViewManifest(
        cameras=tuple(manifest.cameras[i] for i in idx),
        ids=tuple(manifest.ids[i] for i in idx),
        asset=manifest.asset,
    )
