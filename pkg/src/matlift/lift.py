"""Lift 2D similarity maps into a 3D similarity point cloud and query it.

Foreground pixels are back-projected through their depth rasters into a cloud
of (position, similarity) samples. The cloud is indexed with an IVF-flat
structure (k-means cells, exact L2 search inside the probed cells) and novel
views are reconstructed by strict-majority voting over each surface point's
k nearest cloud samples.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels, formats
from .errors import ValidationError
from .oracle import Click, SimilarityOracle, make_request
from .render import Bvh, ViewBundle, build_bvh, camera_rays, cast_rays, pixel_ray, render_view
from .scene import Camera, Mesh, ViewManifest, sort_camera_order

DEFAULT_CLUSTERS = 100
DEFAULT_PROBES = 5
KMEANS_MAX_ITER = 25
KMEANS_TOL = 1e-4
# FAISS-style training cap: k-means centroids are fitted on at most this many
# samples per cluster; the full cloud is then assigned in one pass.
KMEANS_TRAIN_CAP = 256


@dataclass(frozen=True)
class SelectionParams:
    """Voting parameters. k is forced odd so strict majority is unambiguous."""

    k: int = 9
    threshold: float = 0.5
    exact: bool = False

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ValidationError(f"k must be an odd positive integer, got {self.k}")
        if not (0.0 <= self.threshold <= 1.0):
            raise ValidationError(f"threshold must be in [0,1], got {self.threshold}")


@dataclass(frozen=True, eq=False)
class SimilarityCloud:
    """3D samples with similarity values, one per lifted foreground pixel."""

    points: np.ndarray      # (N, 3) float64
    values: np.ndarray      # (N,)  float64 in [0, 1]
    view_idx: np.ndarray    # (N,)  int64 into view_ids
    view_ids: tuple[str, ...] = ()

    def __post_init__(self):
        p = np.ascontiguousarray(self.points, dtype=np.float64)
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        w = np.ascontiguousarray(self.view_idx, dtype=np.int64)
        if p.ndim != 2 or p.shape[1] != 3 or v.shape != (p.shape[0],) or w.shape != (p.shape[0],):
            raise ValidationError("cloud arrays must be (N,3), (N,), (N,)")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "view_idx", w)
        object.__setattr__(self, "view_ids", tuple(self.view_ids))

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_values(self, values: np.ndarray) -> "SimilarityCloud":
        return SimilarityCloud(self.points, values, self.view_idx, self.view_ids)

    def save(self, path: str | Path) -> None:
        formats.write_cloud(path, self.points, self.values, self.view_idx)

    @classmethod
    def load(cls, path: str | Path, view_ids: Sequence[str] = ()) -> "SimilarityCloud":
        points, values, view_idx = formats.read_cloud(path)
        return cls(points, values, view_idx, tuple(view_ids))


def backproject(bundles: Sequence[ViewBundle], view_ids: Sequence[str] | None = None,
                stride: int = 1) -> SimilarityCloud:
    """One cloud point per foreground pixel at its depth-ray hit position.

    An optional pixel stride subsamples the raster grid uniformly.
    """
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    if view_ids is None:
        view_ids = [f"view_{i}" for i in range(len(bundles))]
    if len(view_ids) != len(bundles):
        raise ValidationError("need one view id per bundle")
    pts, vals, idxs = [], [], []
    for vi, bundle in enumerate(bundles):
        if bundle.similarity is None:
            raise ValidationError(f"bundle {view_ids[vi]!r} has no similarity raster")
        dirs = camera_rays(bundle.camera)[::stride, ::stride]
        depth = bundle.depth[::stride, ::stride]
        sim = bundle.similarity[::stride, ::stride]
        fg = bundle.foreground[::stride, ::stride]
        if not fg.any():
            continue
        p = bundle.camera.position[None, :] + depth[fg][:, None] * dirs[fg]
        pts.append(p)
        vals.append(sim[fg].astype(np.float64))
        idxs.append(np.full(p.shape[0], vi, dtype=np.int64))
    if not pts:
        return SimilarityCloud(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64),
                               tuple(view_ids))
    return SimilarityCloud(np.concatenate(pts), np.concatenate(vals),
                           np.concatenate(idxs), tuple(view_ids))


# ---------------------------------------------------------------------------
# k-means

def _assign_nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist2 = np.empty(n, dtype=np.float64)
    _kernels.assign_nearest(np.ascontiguousarray(points),
                            np.ascontiguousarray(centroids), labels, dist2)
    return labels, dist2


def _kmeans_pp_init(train: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = train.shape[0]
    centroids = np.empty((k, 3), dtype=np.float64)
    centroids[0] = train[int(rng.integers(n))]
    d2 = ((train - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = train[idx]
        np.minimum(d2, ((train - centroids[i]) ** 2).sum(axis=1), out=d2)
    return centroids


def _kmeans(points: np.ndarray, k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ / Lloyd; returns (centroids, labels) with empty
    clusters dropped. Training uses at most KMEANS_TRAIN_CAP*k samples."""
    n = points.shape[0]
    k = min(k, n)
    rng = np.random.default_rng(seed)
    cap = KMEANS_TRAIN_CAP * k
    if n > cap:
        sel = rng.choice(n, size=cap, replace=False)
        sel.sort()
        train = points[sel]
    else:
        train = points

    centroids = _kmeans_pp_init(train, k, rng)
    prev_inertia = np.inf
    for _ in range(KMEANS_MAX_ITER):
        labels, d2 = _assign_nearest(train, centroids)
        inertia = float(d2.sum())
        counts = np.bincount(labels, minlength=k)
        for dim in range(3):
            sums = np.bincount(labels, weights=train[:, dim], minlength=k)
            nz = counts > 0
            centroids[nz, dim] = sums[nz] / counts[nz]
        if prev_inertia < np.inf and prev_inertia > 0.0:
            if (prev_inertia - inertia) / prev_inertia < KMEANS_TOL:
                break
        elif inertia == 0.0:
            break
        prev_inertia = inertia

    labels, _ = _assign_nearest(points, centroids)
    counts = np.bincount(labels, minlength=k)
    keep = np.flatnonzero(counts > 0)
    remap = np.full(k, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    return centroids[keep], remap[labels]


# ---------------------------------------------------------------------------
# IVF index

class IvfIndex:
    """Clustered L2 nearest-neighbor structure over a similarity cloud.

    Queries probe the n_probe cells with nearest centroids and search exactly
    (per-cell KD-trees) within them.
    """

    def __init__(self, cloud: SimilarityCloud, centroids: np.ndarray,
                 labels: np.ndarray, n_probe: int, build_seconds: float,
                 _shared: "IvfIndex | None" = None):
        self.cloud = cloud
        self.centroids = centroids
        self.labels = labels
        self.n_probe = n_probe
        self.build_seconds = build_seconds
        if _shared is not None:
            self.cluster_point_ids = _shared.cluster_point_ids
            self._trees = _shared._trees
        else:
            order = np.argsort(labels, kind="stable")
            counts = np.bincount(labels, minlength=centroids.shape[0])
            bounds = np.concatenate([[0], np.cumsum(counts)])
            self.cluster_point_ids = [
                order[bounds[c]:bounds[c + 1]] for c in range(centroids.shape[0])
            ]
            self._trees = [
                cKDTree(cloud.points[ids]) for ids in self.cluster_point_ids
            ]

    @property
    def cluster_count(self) -> int:
        return self.centroids.shape[0]

    def __len__(self) -> int:
        return len(self.cloud)

    def with_values(self, values: np.ndarray) -> "IvfIndex":
        """Same positional structure, different similarity values (cheap)."""
        return IvfIndex(self.cloud.with_values(values), self.centroids, self.labels,
                        self.n_probe, self.build_seconds, _shared=self)


def build_index(cloud: SimilarityCloud, n_clusters: int = DEFAULT_CLUSTERS,
                n_probe: int = DEFAULT_PROBES, seed: int = 0) -> IvfIndex:
    """k-means the cloud positions and bucket points by nearest centroid."""
    if len(cloud) == 0:
        raise ValidationError("cannot index an empty cloud")
    if n_clusters < 1:
        raise ValidationError(f"n_clusters must be >= 1, got {n_clusters}")
    if n_probe < 1:
        raise ValidationError(f"n_probe must be >= 1, got {n_probe}")
    t0 = time.perf_counter()
    centroids, labels = _kmeans(cloud.points, min(n_clusters, len(cloud)), seed)
    index = IvfIndex(cloud, centroids, labels,
                     min(n_probe, centroids.shape[0]), 0.0)
    index.build_seconds = time.perf_counter() - t0
    return index


def _probe_order(index: IvfIndex, point: np.ndarray, n_probe: int) -> np.ndarray:
    d2 = ((index.centroids - point[None, :]) ** 2).sum(axis=1)
    return np.argsort(d2, kind="stable")[:n_probe]


def knn_query(index: IvfIndex, point, k: int,
              n_probe: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """k nearest cloud points among the probed cells, distance ascending.

    Exact L2 within visited cells; distance ties order by point id. Returns
    (ids, distances); fewer than k entries when the probed cells hold fewer
    points.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    point = np.asarray(point, dtype=np.float64).reshape(3)
    n_probe = min(n_probe if n_probe is not None else index.n_probe, index.cluster_count)
    probes = _probe_order(index, point, n_probe)
    cand = np.concatenate([index.cluster_point_ids[c] for c in probes])
    d2 = ((index.cloud.points[cand] - point[None, :]) ** 2).sum(axis=1)
    order = np.lexsort((cand, d2))[:k]
    return cand[order], np.sqrt(d2[order])


def knn_brute(cloud: SimilarityCloud, point, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive kNN over the whole cloud with the same tie ordering."""
    point = np.asarray(point, dtype=np.float64).reshape(3)
    d2 = ((cloud.points - point[None, :]) ** 2).sum(axis=1)
    ids = np.arange(len(cloud))
    order = np.lexsort((ids, d2))[:k]
    return ids[order], np.sqrt(d2[order])


def knn_query_batch(index: IvfIndex, queries: np.ndarray, k: int,
                    n_probe: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized IVF kNN for many queries.

    Returns (ids (N,k), distances (N,k)) sorted ascending per row, padded
    with -1 / inf when fewer than k points are visited. Grouped per probed
    cell so each cell's KD-tree answers one batched query.
    """
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    n = q.shape[0]
    if n == 0:
        return np.empty((0, k), dtype=np.int64), np.empty((0, k))
    C = index.cluster_count
    P = min(n_probe if n_probe is not None else index.n_probe, C)

    probes = np.empty((n, P), dtype=np.int64)
    _kernels.nearest_clusters(q, np.ascontiguousarray(index.centroids), probes)

    pair_query = np.repeat(np.arange(n), P)
    pair_cluster = probes.ravel()
    order = np.argsort(pair_cluster, kind="stable")
    sorted_clusters = pair_cluster[order]
    bounds = np.searchsorted(sorted_clusters, np.arange(C + 1))

    flat_d = np.full((n * P, k), np.inf)
    flat_i = np.full((n * P, k), -1, dtype=np.int64)
    for c in range(C):
        lo, hi = bounds[c], bounds[c + 1]
        if lo == hi:
            continue
        rows = order[lo:hi]
        ids_c = index.cluster_point_ids[c]
        kk = min(k, ids_c.size)
        d, i = index._trees[c].query(q[pair_query[rows]], k=kk, workers=-1)
        if kk == 1:
            d = d[:, None]
            i = i[:, None]
        flat_d[rows, :kk] = d
        flat_i[rows, :kk] = ids_c[i]

    all_d = flat_d.reshape(n, P * k)
    all_i = flat_i.reshape(n, P * k)
    if P * k == k:
        return all_i, all_d
    sel = np.argpartition(all_d, k - 1, axis=1)[:, :k]
    rows = np.arange(n)[:, None]
    dsel = all_d[rows, sel]
    isel = all_i[rows, sel]
    fine = np.argsort(dsel, axis=1, kind="stable")
    return isel[rows, fine], dsel[rows, fine]


def _knn_exact_batch(cloud: SimilarityCloud, queries: np.ndarray, k: int,
                     chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    pts = cloud.points
    kk = min(k, pts.shape[0])
    out_i = np.full((q.shape[0], k), -1, dtype=np.int64)
    out_d = np.full((q.shape[0], k), np.inf)
    p2 = (pts ** 2).sum(axis=1)
    for lo in range(0, q.shape[0], chunk):
        block = q[lo:lo + chunk]
        d2 = (block ** 2).sum(axis=1)[:, None] - 2.0 * (block @ pts.T) + p2[None, :]
        np.maximum(d2, 0.0, out=d2)
        sel = np.argpartition(d2, kk - 1, axis=1)[:, :kk] if kk < pts.shape[0] else \
            np.broadcast_to(np.arange(pts.shape[0]), (block.shape[0], pts.shape[0])).copy()
        rows = np.arange(block.shape[0])[:, None]
        dsel = d2[rows, sel]
        fine = np.argsort(dsel, axis=1, kind="stable")
        out_i[lo:lo + chunk, :kk] = sel[rows, fine][:, :kk]
        out_d[lo:lo + chunk, :kk] = np.sqrt(dsel[rows, fine][:, :kk])
    return out_i, out_d


# ---------------------------------------------------------------------------
# Voting

def vote(index: IvfIndex, point, params: SelectionParams) -> tuple[bool, float]:
    """Strict-majority vote over the k nearest cloud samples.

    Selected iff more than half of the neighbors have value >= threshold;
    also returns the mean neighbor similarity (the heatmap value).
    """
    if len(index) == 0:
        raise ValidationError("empty index")
    if params.exact:
        ids, _ = knn_brute(index.cloud, point, params.k)
    else:
        ids, _ = knn_query(index, point, params.k)
    vals = index.cloud.values[ids]
    m = vals.size
    selected = int((vals >= params.threshold).sum()) > m / 2.0
    return bool(selected), float(vals.mean())


def vote_batch(index: IvfIndex, points: np.ndarray,
               params: SelectionParams) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`vote` over many query points."""
    if len(index) == 0:
        raise ValidationError("empty index")
    if params.exact:
        ids, _ = _knn_exact_batch(index.cloud, points, params.k)
    else:
        ids, _ = knn_query_batch(index, points, params.k)
    valid = ids >= 0
    counts = valid.sum(axis=1)
    vals = np.where(valid, index.cloud.values[np.clip(ids, 0, None)], 0.0)
    passed = ((vals >= params.threshold) & valid).sum(axis=1)
    selected = passed > counts / 2.0
    means = vals.sum(axis=1) / np.maximum(counts, 1)
    return selected, means


def reconstruct_view(index: IvfIndex, mesh: Mesh, bvh: Bvh, camera: Camera,
                     params: SelectionParams | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Selection mask and mean-similarity heatmap for an arbitrary camera.

    Each pixel's primary ray is cast against the mesh; foreground hit points
    are voted in the cloud. Background pixels are unselected with heatmap 0.
    """
    params = params or SelectionParams()
    w, h = camera.resolution
    dirs = camera_rays(camera).reshape(-1, 3)
    origins = np.broadcast_to(camera.position, dirs.shape)
    t, tri = cast_rays(bvh, origins, dirs)
    fg = tri >= 0
    mask = np.zeros(h * w, dtype=bool)
    heat = np.zeros(h * w, dtype=np.float32)
    if fg.any():
        pts = camera.position[None, :] + t[fg, None] * dirs[fg]
        sel, mean = vote_batch(index, pts, params)
        mask[fg] = sel
        heat[fg] = mean
    return mask.reshape(h, w), heat.reshape(h, w)


# ---------------------------------------------------------------------------
# Sessions

def manifest_hash(manifest: ViewManifest) -> str:
    rows = []
    for vid, cam in zip(manifest.ids, manifest.cameras):
        rows.append([vid, cam.position.tolist(), cam.look_at.tolist(), cam.up.tolist(),
                     cam.vertical_fov, list(cam.resolution)])
    return hashlib.md5(json.dumps(rows).encode()).hexdigest()


@dataclass(eq=False)
class SelectionSession:
    """One interactive selection: click, lifted cloud, index and mask cache.

    The index fingerprint covers (click, oracle seed, manifest); threshold
    and k changes re-vote at query time and never invalidate it.
    """

    mesh: Mesh
    bvh: Bvh
    manifest: ViewManifest
    oracle: SimilarityOracle
    click: Click
    params: SelectionParams
    cloud: SimilarityCloud
    index: IvfIndex
    bundles: dict[str, ViewBundle]
    sequence: tuple[str, ...]
    timings: dict[str, float]
    n_clusters: int = DEFAULT_CLUSTERS
    n_probe: int = DEFAULT_PROBES
    seed: int = 0
    stride: int = 1
    duplicate: bool = True
    index_builds: int = 1
    _mask_cache: dict = field(default_factory=dict, repr=False)

    @property
    def fingerprint(self) -> tuple:
        noise_seed = getattr(getattr(self.oracle, "noise", None), "seed", None)
        return (self.click, noise_seed, manifest_hash(self.manifest))

    def click_point(self) -> np.ndarray:
        return self.bundles[self.click.view_id].hit_point(self.click.pixel)

    def set_params(self, k: int | None = None, threshold: float | None = None) -> None:
        """Re-threshold only; no oracle call, no index rebuild."""
        kw = {}
        if k is not None:
            kw["k"] = k
        if threshold is not None:
            kw["threshold"] = threshold
        self.params = replace(self.params, **kw)

    def apply_click(self, click: Click) -> None:
        """Re-lift for a new click; cache hit when the click is unchanged."""
        if click == self.click:
            return
        rebuilt = _run_pipeline(
            self.mesh, self.manifest, self.oracle, click, self.params,
            bvh=self.bvh, n_clusters=self.n_clusters, n_probe=self.n_probe,
            seed=self.seed, stride=self.stride, duplicate=self.duplicate,
            bundles=self.bundles,
        )
        self.click = click
        self.cloud = rebuilt.cloud
        self.index = rebuilt.index
        self.bundles = rebuilt.bundles
        self.sequence = rebuilt.sequence
        self.timings = rebuilt.timings
        self.index_builds += 1
        self._mask_cache.clear()

    def reconstruct(self, camera: Camera,
                    params: SelectionParams | None = None) -> tuple[np.ndarray, np.ndarray]:
        params = params or self.params
        key = (
            tuple(camera.position), tuple(camera.look_at), tuple(camera.up),
            camera.vertical_fov, camera.resolution,
            params.k, params.threshold, params.exact,
        )
        cached = self._mask_cache.get(key)
        if cached is not None:
            return cached
        result = reconstruct_view(self.index, self.mesh, self.bvh, camera, params)
        if len(self._mask_cache) > 64:
            self._mask_cache.clear()
        self._mask_cache[key] = result
        return result


def _run_pipeline(mesh, manifest, oracle, click, params, *, bvh, n_clusters,
                  n_probe, seed, stride, duplicate, bundles):
    t_start = time.perf_counter()
    click_idx = manifest.index_of(click.view_id)
    cam = manifest.cameras[click_idx]

    # validate the click with a single ray before rendering anything
    d = pixel_ray(cam, click.pixel)
    _, tri = cast_rays(bvh, cam.position[None, :], d[None, :])
    if tri[0] < 0:
        raise ValidationError(
            f"click {click.pixel} on view {click.view_id!r} hits no surface")

    order = sort_camera_order(manifest.cameras, click_idx)
    ordered_ids = [manifest.ids[i] for i in order]

    t0 = time.perf_counter()
    frames = dict(bundles or {})
    for i in order:
        vid = manifest.ids[i]
        if vid not in frames:
            frames[vid] = render_view(mesh, bvh, manifest.cameras[i])
    render_ms = (time.perf_counter() - t0) * 1000.0

    request = make_request(ordered_ids, click, duplicate)
    t0 = time.perf_counter()
    rasters = oracle.query(request, frames)
    oracle_ms = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    lifted = []
    for vid, sim in zip(request.output_frames, rasters):
        frames[vid] = frames[vid].with_similarity(sim)
        lifted.append(frames[vid])
    cloud = backproject(lifted, request.output_frames, stride=stride)
    backproject_ms = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    index = build_index(cloud, n_clusters=n_clusters, n_probe=n_probe, seed=seed)
    index_build_ms = (time.perf_counter() - t0) * 1000.0

    timings = {
        "render_ms": render_ms,
        "oracle_ms": oracle_ms,
        "backproject_ms": backproject_ms,
        "index_build_ms": index_build_ms,
        "total_ms": (time.perf_counter() - t_start) * 1000.0,
    }
    return SelectionSession(
        mesh=mesh, bvh=bvh, manifest=manifest, oracle=oracle, click=click,
        params=params, cloud=cloud, index=index, bundles=frames,
        sequence=tuple(request.output_frames), timings=timings,
        n_clusters=n_clusters, n_probe=n_probe, seed=seed, stride=stride,
        duplicate=duplicate,
    )


def select(mesh: Mesh, manifest: ViewManifest, oracle: SimilarityOracle,
           click: Click, params: SelectionParams | None = None, *,
           bvh: Bvh | None = None, n_clusters: int = DEFAULT_CLUSTERS,
           n_probe: int = DEFAULT_PROBES, seed: int = 0, stride: int = 1,
           duplicate: bool = True,
           bundles: Mapping[str, ViewBundle] | None = None) -> SelectionSession:
    """End-to-end selection: sort views from the clicked one, render, query
    the oracle with the clicked frame duplicated, back-project and index.

    Pre-rendered bundles may be passed in and are reused; the session's
    timings dict reports render/oracle/backproject/index/total milliseconds.
    """
    params = params or SelectionParams()
    if bvh is None:
        bvh = build_bvh(mesh)
    return _run_pipeline(
        mesh, manifest, oracle, click, params, bvh=bvh, n_clusters=n_clusters,
        n_probe=n_probe, seed=seed, stride=stride, duplicate=duplicate,
        bundles=bundles,
    )
