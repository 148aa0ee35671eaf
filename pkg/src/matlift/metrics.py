"""Selection evaluation: accuracy, multiview consistency, click robustness.

Accuracy compares reconstructed masks against rendered ground-truth material
masks over random novel views. Consistency checks the binary selection of
the clicked 3D point across views where it is unoccluded. Robustness runs
several clicks inside one material and averages pairwise mask Hamming
distances. All metric values live in [0, 1]; Hamming-style scores are
presented x100.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import MatliftError, UnselectableMaterialError, ValidationError
from .lift import SelectionSession, vote
from .oracle import Click, sample_click
from .render import Bvh, ViewBundle, cast_rays, render_view
from .scene import Mesh, ViewManifest, random_cameras

OCCLUSION_TOL_FACTOR = 1e-4
CI95_Z = 1.959963984540054


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Thresholded selection raster tied to a view."""

    pixels: np.ndarray
    view_id: str


def miou(a, b) -> float:
    """Intersection over union; both-empty counts as perfect overlap (1)."""
    a, b = _check_pair(a, b)
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def precision_recall_f1(pred, truth) -> tuple[float, float, float]:
    """(precision, recall, F1); empty denominators score 0 except that a
    correctly empty prediction scores (1, 1, 1)."""
    pred, truth = _check_pair(pred, truth)
    tp = int(np.logical_and(pred, truth).sum())
    np_pred = int(pred.sum())
    np_truth = int(truth.sum())
    if np_pred == 0 and np_truth == 0:
        return 1.0, 1.0, 1.0
    p = tp / np_pred if np_pred else 0.0
    r = tp / np_truth if np_truth else 0.0
    f1 = 2.0 * p * r / (p + r) if (p + r) else 0.0
    return float(p), float(r), float(f1)


def hamming_pct(a, b) -> float:
    """100 x fraction of differing pixels."""
    a, b = _check_pair(a, b)
    return float(100.0 * np.mean(a != b))


def _mean_ci(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    return mean, float(CI95_Z * arr.std(ddof=1) / math.sqrt(arr.size))


@dataclass
class MaterialAccuracy:
    material: int
    n_clicks: int
    n_views: int
    miou_mean: float
    miou_ci95: float
    f1_mean: float
    f1_ci95: float
    precision_mean: float
    precision_ci95: float
    recall_mean: float
    recall_ci95: float


@dataclass
class EvalReport:
    """Aggregated evaluation results, JSON- and table-renderable."""

    accuracy: list[MaterialAccuracy] = field(default_factory=list)
    consistency: float | None = None
    robustness: dict[int, float] = field(default_factory=dict)

    def to_json(self, indent: int = 2) -> str:
        payload = {
            "accuracy": [asdict(row) for row in self.accuracy],
            "consistency": self.consistency,
            "robustness": {str(k): v for k, v in self.robustness.items()},
        }
        return json.dumps(payload, indent=indent)

    def to_table(self) -> str:
        lines = []
        if self.accuracy:
            header = f"{'material':>8}  {'mIoU':>14}  {'F1':>14}  {'precision':>14}  {'recall':>14}"
            lines.append(header)
            lines.append("-" * len(header))
            for row in self.accuracy:
                lines.append(
                    f"{row.material:>8}  "
                    f"{row.miou_mean:6.3f} ±{row.miou_ci95:5.3f}  "
                    f"{row.f1_mean:6.3f} ±{row.f1_ci95:5.3f}  "
                    f"{row.precision_mean:6.3f} ±{row.precision_ci95:5.3f}  "
                    f"{row.recall_mean:6.3f} ±{row.recall_ci95:5.3f}"
                )
        if self.consistency is not None:
            lines.append(f"consistency (x100, lower is better): {self.consistency:.3f}")
        for material, score in sorted(self.robustness.items()):
            lines.append(f"robustness material {material} (x100, lower is better): {score:.3f}")
        return "\n".join(lines)


SessionFactory = Callable[[Click], SelectionSession]


def _click_on_material(bundles: Mapping[str, ViewBundle], manifest: ViewManifest,
                       material: int, rng: np.random.Generator) -> Click:
    order = rng.permutation(len(manifest))
    for vi in order:
        vid = manifest.ids[int(vi)]
        try:
            return sample_click(bundles[vid].material_id, material, rng, vid)
        except UnselectableMaterialError:
            continue
    raise UnselectableMaterialError(
        f"material {material} is unselectable in every manifest view")


def eval_accuracy(session_factory: SessionFactory, mesh: Mesh, bvh: Bvh,
                  manifest: ViewManifest, bundles: Mapping[str, ViewBundle],
                  n_views: int = 50, n_clicks: int = 5, seed: int = 0,
                  materials: Sequence[int] | None = None) -> EvalReport:
    """Per-material selection accuracy over seeded-random novel views.

    For each material, n_clicks clicks are sampled inside it; each click's
    session reconstructs the same n_views novel views, scored against
    rendered ground-truth masks. Means carry 95% confidence intervals over
    per-click means; unselectable materials are skipped with a warning.
    """
    rng = np.random.default_rng(seed)
    cam0 = manifest.cameras[0]
    radius = float(np.linalg.norm(cam0.position - mesh.centroid()))
    novel = random_cameras(n_views, mesh.centroid(), radius, cam0.vertical_fov,
                           cam0.resolution, seed=seed + 1)
    gt_ids = [render_view(mesh, bvh, cam).material_id for cam in novel]

    report = EvalReport()
    for material in (materials if materials is not None else range(mesh.material_count)):
        try:
            clicks = [_click_on_material(bundles, manifest, material, rng)
                      for _ in range(n_clicks)]
        except UnselectableMaterialError as exc:
            warnings.warn(f"skipping material {material}: {exc}")
            continue
        per_click = {"miou": [], "f1": [], "precision": [], "recall": []}
        for click in clicks:
            session = session_factory(click)
            scores = {k: [] for k in per_click}
            for cam, gt in zip(novel, gt_ids):
                mask, _ = session.reconstruct(cam)
                truth = gt == material
                p, r, f1 = precision_recall_f1(mask, truth)
                scores["miou"].append(miou(mask, truth))
                scores["f1"].append(f1)
                scores["precision"].append(p)
                scores["recall"].append(r)
            for k in per_click:
                per_click[k].append(float(np.mean(scores[k])))
        miou_m, miou_ci = _mean_ci(per_click["miou"])
        f1_m, f1_ci = _mean_ci(per_click["f1"])
        p_m, p_ci = _mean_ci(per_click["precision"])
        r_m, r_ci = _mean_ci(per_click["recall"])
        report.accuracy.append(MaterialAccuracy(
            material=int(material), n_clicks=n_clicks, n_views=n_views,
            miou_mean=miou_m, miou_ci95=miou_ci, f1_mean=f1_m, f1_ci95=f1_ci,
            precision_mean=p_m, precision_ci95=p_ci,
            recall_mean=r_m, recall_ci95=r_ci,
        ))
    return report


def eval_consistency(session: SelectionSession, n_views: int = 50, seed: int = 0,
                     max_attempts: int = 10_000) -> float:
    """Mean deviation (x100) of the clicked point's selection across views.

    Views are rejection-sampled so the clicked 3D point is unoccluded (ray
    from the camera reaches it within 1e-4 x scene diagonal). The reference
    selection value is 1, so a zero score means every unoccluded view agrees
    the point is selected.
    """
    point = session.click_point()
    mesh = session.mesh
    lo, hi = mesh.bounds()
    tol = OCCLUSION_TOL_FACTOR * float(np.linalg.norm(hi - lo))
    cam0 = session.manifest.cameras[0]
    radius = float(np.linalg.norm(cam0.position - mesh.centroid()))
    rng = np.random.default_rng(seed)

    deviations = []
    attempts = 0
    while len(deviations) < n_views and attempts < max_attempts:
        attempts += 1
        d = rng.normal(size=3)
        norm = float(np.linalg.norm(d))
        if norm < 1e-9 or abs(d[2] / norm) > 0.999:
            continue
        position = mesh.centroid() + radius * d / norm
        to_point = point - position
        dist = float(np.linalg.norm(to_point))
        if dist < tol:
            continue
        t, tri = cast_rays(session.bvh, position[None, :], (to_point / dist)[None, :])
        if tri[0] < 0 or t[0] < dist - tol:
            continue  # occluded (or the ray grazes past the scene)
        selected, _ = vote(session.index, point, session.params)
        deviations.append(abs(int(selected) - 1))
    if len(deviations) < n_views:
        raise MatliftError(
            f"only {len(deviations)} of {n_views} unoccluded views found "
            f"in {max_attempts} attempts")
    return float(100.0 * np.mean(deviations))


def eval_robustness(session_factory: SessionFactory, mesh: Mesh, bvh: Bvh,
                    manifest: ViewManifest, bundles: Mapping[str, ViewBundle],
                    material: int, n_clicks: int = 5, seed: int = 0) -> float:
    """Mean pairwise Hamming (x100) between masks of clicks inside one
    material, all reconstructed on the same seeded-random view."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(manifest))
    view_idx = None
    for vi in order:
        vid = manifest.ids[int(vi)]
        try:
            sample_click(bundles[vid].material_id, material, rng, vid)
            view_idx = int(vi)
            break
        except UnselectableMaterialError:
            continue
    if view_idx is None:
        raise UnselectableMaterialError(
            f"material {material} is unselectable in every manifest view")
    view_id = manifest.ids[view_idx]
    eval_cam = manifest.cameras[view_idx]

    masks = []
    for _ in range(n_clicks):
        click = sample_click(bundles[view_id].material_id, material, rng, view_id)
        session = session_factory(click)
        mask, _ = session.reconstruct(eval_cam)
        masks.append(mask)
    pair_scores = [
        hamming_pct(masks[i], masks[j])
        for i in range(n_clicks) for j in range(i + 1, n_clicks)
    ]
    return float(np.mean(pair_scores))
