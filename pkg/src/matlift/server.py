"""HTTP facade for the interactive selection loop.

Thin-client contract: the server renders every frame and composites overlays
(50% alpha; selection masks in green, heatmaps blue to red, segment groups in
their palette colors), so the UI never computes geometry or similarity.
Cameras are orbit-parameterized (yaw/pitch/dist about the asset centroid).

One selection may be in flight per session (409 on overlap); threshold/k
patches are immediate and never touch the oracle or the index.
"""

from __future__ import annotations

import io
import json
import math
import threading
import zipfile
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel
from PIL import Image

from . import formats, lift, segment
from .errors import MatliftError, ValidationError
from .oracle import Click, SyntheticOracle
from .render import bake_uv, build_bvh, camera_rays, render_view
from .scene import Camera, Mesh, ViewManifest, fibonacci_cameras, load_mesh
from .service import EngineConfig, config_from_mapping, _view_ids

OVERLAY_ALPHA = 0.5
MASK_COLOR = np.array([0, 200, 0], dtype=np.float64)  # green, per convention


class SessionBody(BaseModel):
    asset_id: str
    config: dict | None = None


class ClickBody(BaseModel):
    yaw: float
    pitch: float
    dist: float
    x: int
    y: int
    polarity: str = "positive"


class ParamsBody(BaseModel):
    threshold: float | None = None
    k: int | None = None


class SessionRecord:
    def __init__(self, session_id: str, asset_id: str, mesh: Mesh,
                 config: EngineConfig):
        self.session_id = session_id
        self.asset_id = asset_id
        self.mesh = mesh
        self.config = config
        self.bvh = build_bvh(mesh)
        self.params = config.selection.params()
        self.oracle = SyntheticOracle(config.noise)
        self.status = "idle"
        self.error: str | None = None
        self.lock = threading.Lock()
        self.lift_session: lift.SelectionSession | None = None
        self.segmentation: segment.SegmentationResult | None = None
        self.index_builds = 0
        self.click_counter = 0

        res = config.render.resolution
        radius = config.render.camera_radius_scale * mesh.bounding_radius()
        cams = fibonacci_cameras(config.render.n_views, mesh.centroid(), radius,
                                 math.radians(config.render.fov_deg), (res, res))
        self.base_manifest = ViewManifest(
            cameras=tuple(cams), ids=tuple(_view_ids(len(cams))))
        self.base_bundles = {
            vid: render_view(mesh, self.bvh, cam)
            for vid, cam in zip(self.base_manifest.ids, self.base_manifest.cameras)
        }

    def orbit_camera(self, yaw: float, pitch: float, dist: float,
                     resolution: int | None = None) -> Camera:
        res = resolution or self.config.render.resolution
        pitch = max(-85.0, min(85.0, pitch))
        dist = max(dist, 0.05 * self.mesh.bounding_radius())
        yaw_r, pitch_r = math.radians(yaw), math.radians(pitch)
        direction = np.array([
            math.cos(pitch_r) * math.cos(yaw_r),
            math.cos(pitch_r) * math.sin(yaw_r),
            math.sin(pitch_r),
        ])
        return Camera(
            position=self.mesh.centroid() + dist * direction,
            look_at=self.mesh.centroid(),
            up=(0.0, 0.0, 1.0),
            vertical_fov=math.radians(self.config.render.fov_deg),
            resolution=(res, res),
        )

    def run_selection(self, click: Click, camera: Camera, bundle) -> None:
        try:
            sel = self.config.selection
            manifest = ViewManifest(
                cameras=(camera,) + self.base_manifest.cameras,
                ids=(click.view_id,) + self.base_manifest.ids)
            bundles = dict(self.base_bundles)
            bundles[click.view_id] = bundle
            session = lift.select(
                self.mesh, manifest, self.oracle, click, self.params,
                bvh=self.bvh, n_clusters=sel.n_clusters, n_probe=sel.n_probe,
                seed=sel.seed, stride=sel.stride,
                duplicate=sel.duplicate_click_frame, bundles=bundles)
            self.lift_session = session
            self.index_builds += session.index_builds
            self.status = "ready"
        except Exception as exc:  # surfaced via GET /sessions/{id}
            self.error = str(exc)
            self.status = "error"

    def state(self) -> dict:
        session = self.lift_session
        click = session.click if session else None
        return {
            "session_id": self.session_id,
            "asset_id": self.asset_id,
            "status": self.status,
            "error": self.error,
            "click": None if click is None else {
                "view_id": click.view_id, "x": click.pixel[0], "y": click.pixel[1],
                "polarity": click.polarity,
            },
            "params": {"k": self.params.k, "threshold": self.params.threshold},
            "oracle_queries": self.oracle.query_count,
            "index_builds": self.index_builds,
            "cloud_points": 0 if session is None else len(session.cloud),
            "timings": None if session is None else session.timings,
            "groups": None if self.segmentation is None else [
                {"id": g.group_id, "color": list(g.color)}
                for g in self.segmentation.groups
            ],
        }


def _heat_colors(values: np.ndarray) -> np.ndarray:
    """Blue (low) to red (high) linear colormap, shape (..., 3) float."""
    v = np.clip(values, 0.0, 1.0)[..., None]
    return np.concatenate([255.0 * v, np.zeros_like(v), 255.0 * (1.0 - v)], axis=-1)


def create_app(assets_dir: str | Path, config: EngineConfig | None = None) -> FastAPI:
    assets_dir = Path(assets_dir)
    base_config = config or EngineConfig()
    app = FastAPI(title="matlift engine")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    sessions: dict[str, SessionRecord] = {}
    counter = {"n": 0}

    def get_record(session_id: str) -> SessionRecord:
        record = sessions.get(session_id)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return record

    def resolve_asset(asset_id: str) -> tuple[Mesh, Path | None]:
        if "/" in asset_id or "\\" in asset_id or asset_id.startswith("."):
            raise HTTPException(status_code=404, detail=f"unknown asset {asset_id!r}")
        obj = assets_dir / f"{asset_id}.obj"
        if obj.exists():
            return load_mesh(obj), None
        session_dir = assets_dir / asset_id
        if (session_dir / "session.json").exists():
            meta = json.loads((session_dir / "session.json").read_text())
            return load_mesh(session_dir / meta["asset"]), session_dir
        raise HTTPException(status_code=404, detail=f"unknown asset {asset_id!r}")

    def restore_session(record: SessionRecord, session_dir: Path) -> None:
        """Reload a CLI-written session dir: cloud + click; index rebuilt."""
        meta = json.loads((session_dir / "session.json").read_text())
        manifest = ViewManifest.load(session_dir / "manifest.json")
        cloud = lift.SimilarityCloud.load(session_dir / "cloud.msc", manifest.ids)
        idx_cfg = meta["index"]
        index = lift.build_index(cloud, idx_cfg["n_clusters"], idx_cfg["n_probe"],
                                 idx_cfg["seed"])
        click = Click(meta["click"]["view_id"],
                      (meta["click"]["x"], meta["click"]["y"]),
                      meta["click"].get("polarity", "positive"))
        params = lift.SelectionParams(k=meta["params"]["k"],
                                      threshold=meta["params"]["threshold"])
        bundles = {vid: render_view(record.mesh, record.bvh, cam)
                   for vid, cam in zip(manifest.ids, manifest.cameras)}
        record.params = params
        record.lift_session = lift.SelectionSession(
            mesh=record.mesh, bvh=record.bvh, manifest=manifest,
            oracle=record.oracle, click=click, params=params, cloud=cloud,
            index=index, bundles=bundles, sequence=manifest.ids,
            timings={}, n_clusters=idx_cfg["n_clusters"],
            n_probe=idx_cfg["n_probe"], seed=idx_cfg["seed"])
        record.index_builds += 1
        record.status = "ready"

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.get("/assets")
    def list_assets():
        ids = sorted(p.stem for p in assets_dir.glob("*.obj"))
        ids += sorted(p.name for p in assets_dir.iterdir()
                      if p.is_dir() and (p / "session.json").exists())
        return {"assets": ids}

    @app.post("/sessions", status_code=201)
    def create_session(body: SessionBody):
        cfg = base_config
        if body.config:
            try:
                cfg = _merged_config(base_config, body.config)
            except ValidationError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
        mesh, session_dir = resolve_asset(body.asset_id)
        counter["n"] += 1
        session_id = f"s{counter['n']:04d}"
        record = SessionRecord(session_id, body.asset_id, mesh, cfg)
        if session_dir is not None:
            restore_session(record, session_dir)
        sessions[session_id] = record
        return {"session_id": session_id}

    @app.get("/sessions/{session_id}")
    def session_state(session_id: str):
        return get_record(session_id).state()

    @app.get("/sessions/{session_id}/view")
    def session_view(session_id: str, yaw: float = 0.0, pitch: float = 20.0,
                     dist: float = 0.0, overlay: str = "none",
                     res: int | None = None, group: int | None = None):
        record = get_record(session_id)
        if overlay not in ("none", "mask", "heatmap", "segments"):
            raise HTTPException(status_code=422, detail=f"unknown overlay {overlay!r}")
        if dist <= 0.0:
            dist = record.config.render.camera_radius_scale * record.mesh.bounding_radius()
        camera = record.orbit_camera(yaw, pitch, dist, res)
        bundle = render_view(record.mesh, record.bvh, camera)
        rgb = bundle.rgb.astype(np.float64)

        if overlay == "mask" and record.lift_session is not None:
            mask, _ = record.lift_session.reconstruct(camera, record.params)
            rgb[mask] = (1 - OVERLAY_ALPHA) * rgb[mask] + OVERLAY_ALPHA * MASK_COLOR
        elif overlay == "heatmap" and record.lift_session is not None:
            _, heat = record.lift_session.reconstruct(camera, record.params)
            fg = bundle.foreground
            colors = _heat_colors(heat[fg])
            rgb[fg] = (1 - OVERLAY_ALPHA) * rgb[fg] + OVERLAY_ALPHA * colors
        elif overlay == "segments" and record.segmentation is not None:
            fg = bundle.foreground
            if fg.any():
                dirs = camera_rays(camera)[fg]
                pts = camera.position[None, :] + bundle.depth[fg][:, None] * dirs
                labels = record.segmentation.label_of_points(pts)
                palette = np.array([g.color for g in record.segmentation.groups],
                                   dtype=np.float64)
                known = labels >= 0
                if group is not None:
                    known &= labels == group  # one group's mask only
                colors = np.zeros((labels.size, 3))
                colors[known] = palette[labels[known]]
                target = rgb[fg]
                target[known] = ((1 - OVERLAY_ALPHA) * target[known]
                                 + OVERLAY_ALPHA * colors[known])
                rgb[fg] = target

        buf = io.BytesIO()
        Image.fromarray(rgb.astype(np.uint8)).save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/sessions/{session_id}/click", status_code=202)
    def session_click(session_id: str, body: ClickBody):
        record = get_record(session_id)
        camera = record.orbit_camera(body.yaw, body.pitch, body.dist)
        w, h = camera.resolution
        if not (0 <= body.x < w and 0 <= body.y < h):
            raise HTTPException(status_code=422,
                                detail=f"click ({body.x},{body.y}) outside {w}x{h} frame")
        bundle = render_view(record.mesh, record.bvh, camera)
        if bundle.material_id[body.y, body.x] < 0:
            raise HTTPException(status_code=422, detail="click a surface point")
        with record.lock:
            if record.status == "selecting":
                raise HTTPException(status_code=409, detail="selection in progress")
            record.status = "selecting"
            record.error = None
        record.click_counter += 1
        click = Click(view_id=f"click{record.click_counter:03d}",
                      pixel=(body.x, body.y), polarity=body.polarity)
        worker = threading.Thread(
            target=record.run_selection, args=(click, camera, bundle), daemon=True)
        worker.start()
        return {"status": "selecting", "session_id": session_id}

    @app.patch("/sessions/{session_id}/params")
    def session_params(session_id: str, body: ParamsBody):
        record = get_record(session_id)
        try:
            kw = {}
            if body.threshold is not None:
                kw["threshold"] = body.threshold
            if body.k is not None:
                kw["k"] = body.k
            record.params = replace(record.params, **kw)
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if record.lift_session is not None:
            record.lift_session.set_params(k=body.k, threshold=body.threshold)
        return {"params": {"k": record.params.k, "threshold": record.params.threshold}}

    @app.post("/sessions/{session_id}/segment")
    def session_segment(session_id: str):
        record = get_record(session_id)
        with record.lock:
            if record.status == "selecting":
                raise HTTPException(status_code=409, detail="selection in progress")
        try:
            sel = record.config.selection
            result = segment.segment_object(
                record.mesh, record.base_manifest, record.oracle, record.params,
                seed=sel.seed, stride=sel.stride,
                duplicate=sel.duplicate_click_frame, n_clusters=sel.n_clusters,
                n_probe=sel.n_probe, bvh=record.bvh, bundles=record.base_bundles)
        except MatliftError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        record.segmentation = result
        return {"groups": [
            {
                "id": g.group_id,
                "color": list(g.color),
                "representative_click": {
                    "view_id": g.representative_click.view_id,
                    "x": g.representative_click.pixel[0],
                    "y": g.representative_click.pixel[1],
                },
                "click_count": len(g.member_clicks),
            }
            for g in result.groups
        ]}

    @app.get("/sessions/{session_id}/export/{kind}")
    def session_export(session_id: str, kind: str):
        record = get_record(session_id)
        if kind == "uv":
            if record.mesh.uv is None:
                raise HTTPException(status_code=422, detail="asset has no UVs")
            if record.segmentation is not None:
                seg = record.segmentation

                def value_fn(pts, tris):
                    return seg.label_of_points(pts).astype(np.float64)
            else:
                ids = record.mesh.material_ids

                def value_fn(pts, tris):
                    return ids[tris].astype(np.float64)
            atlas = bake_uv(record.mesh, None, None, value_fn, resolution=512)
            id_map = atlas.as_id_map()
            out = np.where(id_map < 0, 255, id_map).astype(np.uint8)
            return Response(content=formats.pgm_bytes(out),
                            media_type="image/x-portable-graymap",
                            headers={"Content-Disposition": "attachment; filename=atlas.pgm"})
        if kind == "cloud":
            if record.lift_session is None:
                raise HTTPException(status_code=404, detail="no selection yet")
            cloud = record.lift_session.cloud
            payload = formats.cloud_bytes(cloud.points, cloud.values, cloud.view_idx)
            return Response(content=payload, media_type="application/octet-stream",
                            headers={"Content-Disposition": "attachment; filename=cloud.msc"})
        if kind == "masks":
            session = record.lift_session
            if session is None:
                raise HTTPException(status_code=404, detail="no selection yet")
            buf = io.BytesIO()
            with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
                for vid, cam in zip(record.base_manifest.ids, record.base_manifest.cameras):
                    mask, _ = session.reconstruct(cam, record.params)
                    out = np.where(mask, 255, 0).astype(np.uint8)
                    zf.writestr(f"mask_{vid}.pgm", formats.pgm_bytes(out))
            return Response(content=buf.getvalue(), media_type="application/zip",
                            headers={"Content-Disposition": "attachment; filename=masks.zip"})
        raise HTTPException(status_code=404, detail=f"unknown export kind {kind!r}")

    return app


def _merged_config(base: EngineConfig, overrides: dict) -> EngineConfig:
    merged = {
        "render": vars(base.render).copy(),
        "selection": vars(base.selection).copy(),
        "noise": vars(base.noise).copy(),
        "service": vars(base.service).copy(),
    }
    for section, payload in overrides.items():
        if section not in merged:
            raise ValidationError(f"unknown config section [{section}]")
        if not isinstance(payload, dict):
            raise ValidationError(f"config section [{section}] must be a table")
        merged[section].update(payload)
    return config_from_mapping(merged)
