"""Automatic material segmentation.

Click proposals come from the modes of a CIE LAB (D65) histogram over
foreground pixels, with the L channel binned more coarsely (4 bins) than a
and b (16 bins each) to discount shading. Per-click selections are then
merged greedily while any pairwise mask mIoU reaches the merge threshold,
and every cloud point is assigned to the surviving group with the highest
mean similarity.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .lift import (
    IvfIndex, SelectionParams, SimilarityCloud, backproject, build_index,
    knn_query_batch,
)
from .metrics import miou
from .oracle import Click, SimilarityOracle, make_request
from .render import Bvh, ViewBundle, build_bvh, camera_rays, cast_rays, render_view
from .scene import Mesh, ViewManifest, random_cameras, sort_camera_order

L_BINS = 4
AB_BINS = 16
DEFAULT_TOTAL_CLICKS = 25
DEFAULT_MERGE_TAU = 0.75
DEFAULT_EVAL_VIEWS = 8

# sRGB (D65) <-> XYZ
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0


@dataclass(frozen=True)
class LabColor:
    L: float
    a: float
    b: float


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, 1.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def rgb_to_lab_array(rgb: np.ndarray) -> np.ndarray:
    """(..., 3) uint8 sRGB -> (..., 3) CIE LAB, D65 white point."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    xyz = _srgb_to_linear(c) @ _RGB_TO_XYZ.T
    t = xyz / _WHITE
    f = np.where(t > _DELTA ** 3, np.cbrt(t), t / (3.0 * _DELTA ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb_array(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab_array`, clipped to the sRGB gamut."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    t = np.where(f > _DELTA, f ** 3, 3.0 * _DELTA ** 2 * (f - 4.0 / 29.0))
    xyz = t * _WHITE
    lin = xyz @ _XYZ_TO_RGB.T
    return np.clip(np.rint(_linear_to_srgb(lin) * 255.0), 0, 255).astype(np.uint8)


def rgb_to_lab(srgb: Sequence[int]) -> LabColor:
    L, a, b = rgb_to_lab_array(np.asarray(srgb, dtype=np.uint8))
    return LabColor(float(L), float(a), float(b))


def lab_to_rgb(lab: LabColor) -> tuple[int, int, int]:
    r, g, b = lab_to_rgb_array(np.array([lab.L, lab.a, lab.b]))
    return int(r), int(g), int(b)


# ---------------------------------------------------------------------------
# Click proposal

@dataclass(frozen=True, eq=False)
class ColorMode:
    """One nonempty histogram bin: its index triple and its pixels."""

    bin_index: tuple[int, int, int]  # (L bin, a bin, b bin)
    pixels: np.ndarray  # (n, 3) rows of (view index, y, x)
    area: int


def lab_bins(lab: np.ndarray) -> np.ndarray:
    """Flat histogram bin per pixel: 4 L-bins x 16 a-bins x 16 b-bins."""
    lbin = np.clip((lab[..., 0] / (100.0 / L_BINS)).astype(np.int64), 0, L_BINS - 1)
    abin = np.clip(((lab[..., 1] + 128.0) / (256.0 / AB_BINS)).astype(np.int64), 0, AB_BINS - 1)
    bbin = np.clip(((lab[..., 2] + 128.0) / (256.0 / AB_BINS)).astype(np.int64), 0, AB_BINS - 1)
    return (lbin * AB_BINS + abin) * AB_BINS + bbin


def _allocate(areas: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder allocation proportional to area, summing to total.

    When mode count <= total, every mode keeps at least one click, funded by
    the currently largest allocations.
    """
    areas = np.asarray(areas, dtype=np.float64)
    quota = total * areas / areas.sum()
    alloc = np.floor(quota).astype(np.int64)
    remainder = total - int(alloc.sum())
    if remainder > 0:
        frac = quota - alloc
        order = np.lexsort((np.arange(areas.size), -areas, -frac))
        alloc[order[:remainder]] += 1
    if areas.size <= total:
        zeros = np.flatnonzero(alloc == 0)
        zeros = zeros[np.argsort(-areas[zeros], kind="stable")]
        for i in zeros:
            donor = int(np.argmax(alloc))
            if alloc[donor] <= 1:
                break
            alloc[donor] -= 1
            alloc[i] += 1
    return alloc


def color_modes(bundles: Sequence[ViewBundle]) -> list[ColorMode]:
    """Nonempty LAB-histogram bins over the foreground pixels of all views."""
    rows, bins = [], []
    for vi, bundle in enumerate(bundles):
        fg = bundle.foreground
        if not fg.any():
            continue
        ys, xs = np.nonzero(fg)
        lab = rgb_to_lab_array(bundle.rgb[ys, xs])
        rows.append(np.stack([np.full(ys.size, vi, dtype=np.int64), ys, xs], axis=1))
        bins.append(lab_bins(lab))
    if not rows:
        raise ValidationError("no foreground pixels in any view")
    rows = np.concatenate(rows)
    bins = np.concatenate(bins)
    order = np.argsort(bins, kind="stable")
    sorted_bins = bins[order]
    edges = np.flatnonzero(np.diff(sorted_bins)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [sorted_bins.size]])
    modes = []
    for s, e in zip(starts, ends):
        flat = int(sorted_bins[s])
        lbin, rest = divmod(flat, AB_BINS * AB_BINS)
        abin, bbin = divmod(rest, AB_BINS)
        modes.append(ColorMode(
            bin_index=(lbin, abin, bbin),
            pixels=rows[order[s:e]],
            area=int(e - s),
        ))
    return modes


def propose_clicks(bundles: Sequence[ViewBundle], view_ids: Sequence[str],
                   total: int = DEFAULT_TOTAL_CLICKS,
                   rng: np.random.Generator | None = None) -> list[Click]:
    """Stratified click proposals over the LAB-histogram modes.

    Each nonempty mode receives clicks proportionally to its pixel area
    (largest-remainder rounding); samples are uniform within the mode.
    """
    if total < 1:
        raise ValidationError(f"need at least one click, got total={total}")
    if len(bundles) != len(view_ids):
        raise ValidationError("need one view id per bundle")
    rng = rng or np.random.default_rng(0)
    modes = color_modes(bundles)
    alloc = _allocate(np.array([m.area for m in modes]), total)
    clicks = []
    for mode, count in zip(modes, alloc):
        for _ in range(int(count)):
            vi, y, x = mode.pixels[int(rng.integers(mode.area))]
            clicks.append(Click(view_id=view_ids[int(vi)], pixel=(int(x), int(y))))
    return clicks


# ---------------------------------------------------------------------------
# Merging

@dataclass(frozen=True)
class MergeGroup:
    representative: int       # click index whose mask survived
    members: tuple[int, ...]  # all click indices merged into this group


def merge_matrix(masks: Sequence[np.ndarray]) -> np.ndarray:
    """Symmetric pairwise-mIoU matrix over flattened mask sets."""
    flats = [np.asarray(m).ravel().astype(bool) for m in masks]
    size = flats[0].size
    if any(f.size != size for f in flats):
        raise ValidationError("all mask sets must share views and resolution")
    n = len(flats)
    m = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j] = m[j, i] = miou(flats[i], flats[j])
    return m


def merge_selections(masks: Sequence[np.ndarray],
                     tau: float = DEFAULT_MERGE_TAU) -> list[MergeGroup]:
    """Greedy merge of click groups while any pairwise mIoU >= tau.

    Each round takes the maximal off-diagonal entry and merges the click
    with the smaller selected area into the other; the larger mask survives
    as the group representative.
    """
    if len(masks) == 0:
        raise ValidationError("no masks to merge")
    flats = [np.asarray(m).ravel().astype(bool) for m in masks]
    matrix = merge_matrix(flats)
    areas = np.array([int(f.sum()) for f in flats])
    n = len(flats)
    alive = np.ones(n, dtype=bool)
    members: dict[int, list[int]] = {i: [i] for i in range(n)}

    work = matrix.copy()
    np.fill_diagonal(work, -1.0)
    while True:
        work_alive = np.where(np.outer(alive, alive), work, -1.0)
        flat_best = int(np.argmax(work_alive))
        i, j = divmod(flat_best, n)
        if work_alive[i, j] < tau:
            break
        # smaller selected area merges into the larger; ties keep the earlier click
        if areas[i] > areas[j] or (areas[i] == areas[j] and i < j):
            winner, loser = i, j
        else:
            winner, loser = j, i
        members[winner].extend(members.pop(loser))
        alive[loser] = False
        work[loser, :] = -1.0
        work[:, loser] = -1.0
    return [MergeGroup(representative=i, members=tuple(sorted(members[i])))
            for i in sorted(members)]


# ---------------------------------------------------------------------------
# Full segmentation

@dataclass
class SegmentGroup:
    group_id: int
    representative_click: Click
    member_clicks: tuple[Click, ...]
    color: tuple[int, int, int]


@dataclass(eq=False)
class SegmentationResult:
    """Material decomposition: surviving groups and per-cloud-point labels."""

    groups: list[SegmentGroup]
    cloud: SimilarityCloud          # positions shared by all per-click clouds
    point_labels: np.ndarray        # (N,) int32 group index, -1 = unknown
    group_values: np.ndarray        # (G, N) per-group similarity values
    index: IvfIndex                 # positional structure over `cloud`
    clicks: list[Click]
    timings: dict[str, float] = field(default_factory=dict)

    def label_of_points(self, points: np.ndarray, k: int = 1) -> np.ndarray:
        """Group label of the nearest cloud point(s) for arbitrary positions."""
        ids, _ = knn_query_batch(self.index, points, k)
        lab = self.point_labels[np.clip(ids[:, 0], 0, None)]
        return np.where(ids[:, 0] >= 0, lab, -1)


def _cloud_geometry(bundles: Sequence[ViewBundle], stride: int):
    pts, idxs, fgs = [], [], []
    for vi, bundle in enumerate(bundles):
        dirs = camera_rays(bundle.camera)[::stride, ::stride]
        depth = bundle.depth[::stride, ::stride]
        fg = bundle.foreground[::stride, ::stride]
        fgs.append(fg)
        if not fg.any():
            continue
        pts.append(bundle.camera.position[None, :] + depth[fg][:, None] * dirs[fg])
        idxs.append(np.full(int(fg.sum()), vi, dtype=np.int64))
    if not pts:
        raise ValidationError("no foreground pixels to lift")
    return np.concatenate(pts), np.concatenate(idxs), fgs


def segment_object(mesh: Mesh, manifest: ViewManifest, oracle: SimilarityOracle,
                   params: SelectionParams | None = None, *,
                   total_clicks: int = DEFAULT_TOTAL_CLICKS,
                   tau: float = DEFAULT_MERGE_TAU,
                   eval_views: int = DEFAULT_EVAL_VIEWS,
                   seed: int = 0, stride: int = 1, duplicate: bool = True,
                   n_clusters: int = 100, n_probe: int = 5,
                   bvh: Bvh | None = None,
                   bundles: Mapping[str, ViewBundle] | None = None) -> SegmentationResult:
    """Propose clicks, lift a selection per click, merge, and label the cloud.

    All clicks share the rendered views and therefore the cloud positions;
    only similarity values differ per click, so the positional index is built
    once. Points whose best group mean-similarity stays below the selection
    threshold are labeled unknown (-1).
    """
    t_start = time.perf_counter()
    params = params or SelectionParams()
    if bvh is None:
        bvh = build_bvh(mesh)
    rng = np.random.default_rng(seed)

    frames: dict[str, ViewBundle] = dict(bundles or {})
    for vid, cam in zip(manifest.ids, manifest.cameras):
        if vid not in frames:
            frames[vid] = render_view(mesh, bvh, cam)
    ordered = [frames[vid] for vid in manifest.ids]

    clicks = propose_clicks(ordered, manifest.ids, total_clicks, rng)

    # shared geometry, per-click values
    points, view_idx, fgs = _cloud_geometry(ordered, stride)
    base_cloud = SimilarityCloud(points, np.zeros(len(points)), view_idx, manifest.ids)
    structure = build_index(base_cloud, n_clusters=n_clusters, n_probe=n_probe, seed=seed)

    group_values = np.empty((len(clicks), len(points)))
    for ci, click in enumerate(clicks):
        order = sort_camera_order(manifest.cameras, manifest.index_of(click.view_id))
        request = make_request([manifest.ids[i] for i in order], click, duplicate)
        rasters = dict(zip(request.output_frames, oracle.query(request, frames)))
        vals = [rasters[vid][::stride, ::stride][fgs[vi]]
                for vi, vid in enumerate(manifest.ids) if fgs[vi].any()]
        group_values[ci] = np.concatenate(vals)

    # per-click masks on a shared set of seeded-random evaluation views
    w, h = manifest.cameras[0].resolution
    eval_res = (max(32, w // 2), max(32, h // 2))
    eval_cams = random_cameras(eval_views, mesh.centroid(),
                               float(np.linalg.norm(manifest.cameras[0].position - mesh.centroid())),
                               manifest.cameras[0].vertical_fov, eval_res, seed=seed)
    masks = [[] for _ in clicks]
    for cam in eval_cams:
        dirs = camera_rays(cam).reshape(-1, 3)
        t, tri = cast_rays(bvh, np.broadcast_to(cam.position, dirs.shape), dirs)
        fg = tri >= 0
        if fg.any():
            hits = cam.position[None, :] + t[fg, None] * dirs[fg]
            # neighbor ids are shared across clicks (same geometry), so the
            # kNN search runs once per view and each click only re-thresholds
            ids, _ = knn_query_batch(structure, hits, params.k)
        else:
            ids = np.empty((0, params.k), dtype=np.int64)
        valid = ids >= 0
        counts = np.maximum(valid.sum(axis=1), 1)
        for ci in range(len(clicks)):
            vals = np.where(valid, group_values[ci][np.clip(ids, 0, None)], 0.0)
            passed = ((vals >= params.threshold) & valid).sum(axis=1)
            m = np.zeros(fg.size, dtype=bool)
            m[fg] = passed > counts / 2.0
            masks[ci].append(m)
    stacked = [np.concatenate(m) for m in masks]

    merge_groups = merge_selections(stacked, tau)

    # assign each cloud point to the best surviving group by vote mean
    self_ids, _ = knn_query_batch(structure, points, params.k)
    valid = self_ids >= 0
    counts = np.maximum(valid.sum(axis=1), 1)
    reps = [g.representative for g in merge_groups]
    means = np.stack([
        np.where(valid, group_values[r][np.clip(self_ids, 0, None)], 0.0).sum(axis=1) / counts
        for r in reps
    ])
    best = np.argmax(means, axis=0)
    best_mean = means[best, np.arange(len(points))]
    labels = np.where(best_mean >= params.threshold, best, -1).astype(np.int32)

    from .render import material_color  # palette shared with the renderer
    groups = [
        SegmentGroup(
            group_id=gi,
            representative_click=clicks[g.representative],
            member_clicks=tuple(clicks[m] for m in g.members),
            color=material_color(gi),
        )
        for gi, g in enumerate(merge_groups)
    ]
    return SegmentationResult(
        groups=groups,
        cloud=base_cloud.with_values(group_values[reps[0]] if reps else base_cloud.values),
        point_labels=labels,
        group_values=group_values[reps] if reps else group_values[:0],
        index=structure,
        clicks=clicks,
        timings={"total_ms": (time.perf_counter() - t_start) * 1000.0},
    )
