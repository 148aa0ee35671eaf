"""Command-line facade: rendering, selection, segmentation, evaluation,
UV export, demo-asset creation and the HTTP server.

Configuration is TOML with [render], [selection], [noise] and [service]
sections; unknown keys are rejected. Validation failures exit with code 2.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shutil
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import assets, formats, lift, metrics, postprocess, segment
from .errors import MatliftError, ValidationError
from .oracle import Click, FileOracle, NoiseModel, SimilarityOracle, SyntheticOracle
from .render import Bvh, bake_uv, build_bvh, render_view
from .scene import Mesh, ViewManifest, fibonacci_cameras, load_mesh

DATA_DIR_ENV = "MATLIFT_DATA_DIR"
CLICK_TO_SELECTION_BUDGET_S = 2.0


@dataclass(frozen=True)
class RenderConfig:
    resolution: int = 256
    n_views: int = 30
    fov_deg: float = 45.0
    camera_radius_scale: float = 2.6

    def __post_init__(self):
        if self.resolution < 1 or self.n_views < 1:
            raise ValidationError("render resolution and n_views must be >= 1")
        if not (0.0 < self.fov_deg < 180.0):
            raise ValidationError(f"fov_deg out of range: {self.fov_deg}")


@dataclass(frozen=True)
class SelectionConfig:
    k: int = 9
    threshold: float = 0.5
    n_clusters: int = 100
    n_probe: int = 5
    stride: int = 1
    duplicate_click_frame: bool = True
    seed: int = 0

    def params(self) -> lift.SelectionParams:
        return lift.SelectionParams(k=self.k, threshold=self.threshold)


@dataclass(frozen=True)
class ServiceConfig:
    port: int = 8799
    data_dir: str = ""
    output_dir: str = "matlift_out"

    def resolved_data_dir(self) -> Path:
        if self.data_dir:
            return Path(self.data_dir)
        return Path(os.environ.get(DATA_DIR_ENV, "matlift_data"))


@dataclass(frozen=True)
class EngineConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    service: ServiceConfig = field(default_factory=ServiceConfig)


_SECTIONS = {
    "render": RenderConfig,
    "selection": SelectionConfig,
    "noise": NoiseModel,
    "service": ServiceConfig,
}


def config_from_mapping(data: dict) -> EngineConfig:
    kwargs = {}
    for section, payload in data.items():
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ValidationError(f"unknown config section [{section}]")
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValidationError(
                f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
        kwargs[section] = cls(**payload)
    return EngineConfig(**kwargs)


def load_config(path: str | Path) -> EngineConfig:
    with open(path, "rb") as f:
        return config_from_mapping(tomllib.load(f))


# ---------------------------------------------------------------------------
# Shared CLI helpers

def _view_ids(n: int) -> list[str]:
    return [f"v{i:03d}" for i in range(n)]


def _build_manifest(spec: str, mesh: Mesh, cfg: EngineConfig,
                    resolution: int | None = None) -> ViewManifest:
    res = resolution or cfg.render.resolution
    if spec.startswith("fibonacci:"):
        try:
            n = int(spec.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad camera spec {spec!r}; expected fibonacci:N")
        cams = fibonacci_cameras(
            n, mesh.centroid(), cfg.render.camera_radius_scale * mesh.bounding_radius(),
            math.radians(cfg.render.fov_deg), (res, res))
        return ViewManifest(cameras=tuple(cams), ids=tuple(_view_ids(n)))
    path = Path(spec)
    if not path.exists():
        raise ValidationError(f"camera manifest {spec!r} not found")
    manifest = ViewManifest.load(path)
    if resolution:
        manifest = ViewManifest(
            cameras=tuple(c.with_resolution((res, res)) for c in manifest.cameras),
            ids=manifest.ids, asset=manifest.asset)
    return manifest


def _load_asset(path: str) -> Mesh:
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"asset {path!r} not found")
    return load_mesh(p)


def _parse_click(text: str) -> Click:
    try:
        view, coords = text.split(":", 1)
        x, y = coords.split(",", 1)
        return Click(view_id=view, pixel=(int(x), int(y)))
    except (ValueError, IndexError):
        raise ValidationError(f"bad click {text!r}; expected <view>:<x>,<y>")


def _parse_noise(text: str | None, base: NoiseModel) -> NoiseModel:
    if not text:
        return base
    kwargs = {}
    for piece in text.split(","):
        if not piece:
            continue
        try:
            key, value = piece.split("=", 1)
        except ValueError:
            raise ValidationError(f"bad noise spec {piece!r}; expected key=value")
        key = key.strip()
        if key in ("pixel_sigma", "view_bias_sigma", "flip_rate"):
            kwargs[key] = float(value)
        elif key in ("blur_px", "seed"):
            kwargs[key] = int(value)
        else:
            raise ValidationError(f"unknown noise key {key!r}")
    return replace(base, **kwargs)


def _render_bundles(mesh: Mesh, bvh: Bvh, manifest: ViewManifest) -> dict:
    return {vid: render_view(mesh, bvh, cam)
            for vid, cam in zip(manifest.ids, manifest.cameras)}


def _session_factory(mesh, manifest, oracle, cfg: EngineConfig, bvh, bundles):
    sel = cfg.selection

    def make(click: Click) -> lift.SelectionSession:
        return lift.select(
            mesh, manifest, oracle, click, sel.params(), bvh=bvh,
            n_clusters=sel.n_clusters, n_probe=sel.n_probe, seed=sel.seed,
            stride=sel.stride, duplicate=sel.duplicate_click_frame,
            bundles=bundles)
    return make


# ---------------------------------------------------------------------------
# Subcommands

def cmd_render_views(args, cfg: EngineConfig) -> int:
    mesh = _load_asset(args.asset)
    manifest = _build_manifest(args.cameras, mesh, cfg, args.res)
    bvh = build_bvh(mesh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for vid, cam in zip(manifest.ids, manifest.cameras):
        render_view(mesh, bvh, cam).save(out, vid)
    manifest.save(out / "manifest.json")
    print(f"wrote {len(manifest)} view bundles to {out}")
    return 0


def cmd_select(args, cfg: EngineConfig) -> int:
    mesh = _load_asset(args.asset)
    manifest = _build_manifest(args.views, mesh, cfg, args.res)
    click = _parse_click(args.click)
    noise = _parse_noise(args.noise, cfg.noise)
    if args.seed is not None:
        noise = replace(noise, seed=args.seed)
    oracle: SimilarityOracle
    if args.oracle_dir:
        oracle = FileOracle(args.oracle_dir)
    else:
        oracle = SyntheticOracle(noise)
    sel = cfg.selection
    params = lift.SelectionParams(
        k=args.k if args.k is not None else sel.k,
        threshold=args.threshold if args.threshold is not None else sel.threshold,
        exact=args.exact)
    seed = args.seed if args.seed is not None else sel.seed

    session = lift.select(
        mesh, manifest, oracle, click, params,
        n_clusters=sel.n_clusters, n_probe=sel.n_probe, seed=seed,
        stride=sel.stride, duplicate=sel.duplicate_click_frame)

    out = Path(args.out or (cfg.service.resolved_data_dir() / "sessions" / f"session_{int(time.time())}"))
    out.mkdir(parents=True, exist_ok=True)
    session.cloud.save(out / "cloud.msc")
    manifest.save(out / "manifest.json")
    shutil.copy2(args.asset, out / Path(args.asset).name)
    mask_views = manifest.ids if args.masks == "all" else (click.view_id,)
    for vid in mask_views:
        mask, heat = session.reconstruct(manifest.camera(vid))
        formats.write_mask_pgm(out / f"mask_{vid}.pgm", mask)
        formats.write_simf(out / f"heat_{vid}.simf", heat)
    (out / "timing.json").write_text(json.dumps(session.timings, indent=2))
    (out / "session.json").write_text(json.dumps({
        "asset": Path(args.asset).name,
        "click": {"view_id": click.view_id, "x": click.pixel[0], "y": click.pixel[1],
                  "polarity": click.polarity},
        "params": {"k": params.k, "threshold": params.threshold},
        "index": {"n_clusters": sel.n_clusters, "n_probe": sel.n_probe, "seed": seed},
        "noise": asdict(noise) if not args.oracle_dir else None,
        "oracle_dir": args.oracle_dir,
        "timings": session.timings,
        "budget_s": CLICK_TO_SELECTION_BUDGET_S,
    }, indent=2))
    total_s = session.timings["total_ms"] / 1000.0
    print(f"session written to {out}  (click-to-selection {total_s:.2f}s, "
          f"budget {CLICK_TO_SELECTION_BUDGET_S:.1f}s)")
    return 0


def cmd_segment(args, cfg: EngineConfig) -> int:
    mesh = _load_asset(args.asset)
    manifest = _build_manifest(args.views, mesh, cfg, args.res)
    noise = _parse_noise(args.noise, cfg.noise)
    oracle = SyntheticOracle(noise)
    sel = cfg.selection
    result = segment.segment_object(
        mesh, manifest, oracle, sel.params(),
        total_clicks=args.clicks, tau=args.tau, seed=args.seed,
        n_clusters=sel.n_clusters, n_probe=sel.n_probe,
        stride=sel.stride, duplicate=sel.duplicate_click_frame)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_cloud(out / "labels.bin", result.cloud.points,
                        result.point_labels.astype(np.float64), result.cloud.view_idx)
    groups_payload = {
        "groups": [
            {
                "id": g.group_id,
                "representative_click": {
                    "view_id": g.representative_click.view_id,
                    "x": g.representative_click.pixel[0],
                    "y": g.representative_click.pixel[1],
                },
                "color": list(g.color),
                "click_count": len(g.member_clicks),
            }
            for g in result.groups
        ],
        "assignment": "labels.bin",
        "unknown_points": int((result.point_labels < 0).sum()),
    }
    (out / "groups.json").write_text(json.dumps(groups_payload, indent=2))
    if mesh.uv is not None:
        atlas = bake_uv(mesh, None, None,
                        lambda pts, tris: result.label_of_points(pts).astype(np.float64),
                        resolution=args.atlas_res)
        formats.write_id_pgm(out / "uv_groups.pgm", atlas.as_id_map())
    print(f"{len(result.groups)} groups written to {out}")
    return 0


def cmd_eval(args, cfg: EngineConfig) -> int:
    mesh = _load_asset(args.asset)
    manifest = _build_manifest(args.views, mesh, cfg, args.res)
    noise = _parse_noise(args.noise, cfg.noise)
    oracle = SyntheticOracle(noise)
    bvh = build_bvh(mesh)
    bundles = _render_bundles(mesh, bvh, manifest)
    factory = _session_factory(mesh, manifest, oracle, cfg, bvh, bundles)

    report = metrics.EvalReport()
    if args.protocol in ("accuracy", "all"):
        report = metrics.eval_accuracy(
            factory, mesh, bvh, manifest, bundles,
            n_views=args.eval_views, n_clicks=args.eval_clicks, seed=args.seed)
    if args.protocol in ("consistency", "all"):
        click = metrics._click_on_material(bundles, manifest, args.material,
                                           np.random.default_rng(args.seed))
        session = factory(click)
        report.consistency = metrics.eval_consistency(
            session, n_views=args.eval_views, seed=args.seed)
    if args.protocol in ("robustness", "all"):
        report.robustness[args.material] = metrics.eval_robustness(
            factory, mesh, bvh, manifest, bundles, args.material,
            n_clicks=args.eval_clicks, seed=args.seed)

    print(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_json())
        print(f"report written to {args.out}")
    return 0


def cmd_bake_uv(args, cfg: EngineConfig) -> int:
    mesh = _load_asset(args.asset)
    if mesh.uv is None:
        raise ValidationError("asset has no UV coordinates")
    if args.mode == "ids":
        ids = mesh.material_ids

        def value_fn(pts, tris):
            return ids[tris].astype(np.float64)
        atlas = bake_uv(mesh, None, None, value_fn, resolution=args.atlas_res)
        formats.write_id_pgm(args.out, atlas.as_id_map())
        print(f"atlas written to {args.out}")
        return 0

    # similarity / mask modes need a lifted session cloud
    if not args.session:
        raise ValidationError(f"--mode {args.mode} needs --session <dir>")
    cloud = lift.SimilarityCloud.load(Path(args.session) / "cloud.msc")
    sel = cfg.selection
    index = lift.build_index(cloud, sel.n_clusters, sel.n_probe, sel.seed)
    params = sel.params()

    def value_fn(pts, tris):
        _, means = lift.vote_batch(index, pts, params)
        return means
    atlas = bake_uv(mesh, None, None, value_fn, resolution=args.atlas_res)
    if args.mode == "similarity":
        out_vals = np.where(atlas.coverage, atlas.values, 0.0).astype(np.float32)
        formats.write_simf(args.out, out_vals)
    else:  # mask: thresholded similarity, cleaned up in texel space
        mask = atlas.coverage & (atlas.values >= params.threshold)
        mask = postprocess.fill_holes(mask, args.fill_holes)
        mask = postprocess.remove_sprinkles(mask, args.min_island)
        formats.write_mask_pgm(args.out, mask)
    print(f"atlas written to {args.out}")
    return 0


def cmd_make_demo(args, cfg: EngineConfig) -> int:
    from .scene import save_obj
    mesh = assets.three_material_demo()
    save_obj(mesh, args.out)
    print(f"demo asset ({mesh.triangle_count} triangles, "
          f"{mesh.material_count} materials) written to {args.out}")
    return 0


def cmd_serve(args, cfg: EngineConfig) -> int:
    import uvicorn

    from .server import create_app
    app = create_app(assets_dir=Path(args.assets), config=cfg)
    uvicorn.run(app, host=args.host, port=args.port or cfg.service.port,
                log_level="warning")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matlift",
        description="Material selection lifted to 3D: render, select, segment, "
                    "evaluate, bake and serve.")
    parser.add_argument("--config", help="engine config TOML")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render-views", help="render RGB/depth/ID bundles")
    p.add_argument("asset")
    p.add_argument("--cameras", default="fibonacci:30",
                   help="fibonacci:N or a camera manifest JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--res", type=int, default=None)
    p.set_defaults(func=cmd_render_views)

    p = sub.add_parser("select", help="run one click-to-selection pipeline")
    p.add_argument("asset")
    p.add_argument("--click", required=True, help="<view>:<x>,<y>")
    p.add_argument("--views", default="fibonacci:30")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--noise", default=None,
                   help="pixel_sigma=S,view_bias_sigma=S,flip_rate=R,blur_px=N,seed=N")
    p.add_argument("--oracle-dir", default=None,
                   help="directory of <view>.simf maps (file oracle)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--exact", action="store_true",
                   help="brute-force neighbor search instead of IVF probing")
    p.add_argument("--masks", choices=("click", "all"), default="click",
                   help="write masks/heatmaps for the clicked view or all views")
    p.add_argument("--out", default=None,
                   help="session directory (default: under MATLIFT_DATA_DIR)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("segment", help="automatic material segmentation")
    p.add_argument("asset")
    p.add_argument("--views", default="fibonacci:30")
    p.add_argument("--clicks", type=int, default=segment.DEFAULT_TOTAL_CLICKS)
    p.add_argument("--tau", type=float, default=segment.DEFAULT_MERGE_TAU)
    p.add_argument("--noise", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--atlas-res", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="run the evaluation protocols")
    p.add_argument("asset")
    p.add_argument("--protocol", choices=("accuracy", "consistency", "robustness", "all"),
                   default="accuracy")
    p.add_argument("--views", default="fibonacci:30")
    p.add_argument("--eval-views", type=int, default=50)
    p.add_argument("--eval-clicks", type=int, default=5)
    p.add_argument("--material", type=int, default=0)
    p.add_argument("--noise", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--res", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bake-uv", help="bake material ids, similarity or a "
                                       "cleaned selection mask to the UV atlas")
    p.add_argument("asset")
    p.add_argument("--mode", choices=("ids", "similarity", "mask"), default="ids")
    p.add_argument("--session", default=None)
    p.add_argument("--atlas-res", type=int, default=512)
    p.add_argument("--fill-holes", type=int, default=64,
                   help="mask mode: fill enclosed background up to this area")
    p.add_argument("--min-island", type=int, default=16,
                   help="mask mode: drop selected islands below this area")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bake_uv)

    p = sub.add_parser("make-demo", help="write the bundled three-material demo asset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_demo)

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--assets", default=".", help="directory of .obj assets / session dirs")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else EngineConfig()
        return args.func(args, cfg)
    except MatliftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
