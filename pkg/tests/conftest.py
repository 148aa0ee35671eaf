import math

import numpy as np
import pytest

from matlift import assets, lift, render, scene
from matlift.oracle import SyntheticOracle


def make_manifest(mesh, n_views, res, radius_scale=2.6, fov_deg=45.0):
    cams = scene.fibonacci_cameras(
        n_views, mesh.centroid(), radius_scale * mesh.bounding_radius(),
        math.radians(fov_deg), (res, res))
    return scene.ViewManifest(
        cameras=tuple(cams), ids=tuple(f"v{i:03d}" for i in range(n_views)))


def click_on_material(bundles, manifest, material, seed=0):
    """First manifest view where the material is selectable, seeded sampling."""
    from matlift.oracle import sample_click
    from matlift.errors import UnselectableMaterialError
    rng = np.random.default_rng(seed)
    for vid in manifest.ids:
        try:
            return sample_click(bundles[vid].material_id, material, rng, vid)
        except UnselectableMaterialError:
            continue
    raise AssertionError(f"material {material} not selectable in any view")


@pytest.fixture(scope="session")
def demo_mesh():
    return assets.three_material_demo()


@pytest.fixture(scope="session")
def demo_bvh(demo_mesh):
    return render.build_bvh(demo_mesh)


@pytest.fixture(scope="session")
def demo_scene(demo_mesh, demo_bvh):
    """Small shared scene: 14 views at 128^2 with rendered bundles."""
    manifest = make_manifest(demo_mesh, 14, 128)
    bundles = {vid: render.render_view(demo_mesh, demo_bvh, cam)
               for vid, cam in zip(manifest.ids, manifest.cameras)}
    return demo_mesh, demo_bvh, manifest, bundles


@pytest.fixture(scope="session")
def zero_session(demo_scene):
    """Zero-noise selection of material 1 on the shared demo scene."""
    mesh, bvh, manifest, bundles = demo_scene
    click = click_on_material(bundles, manifest, 1)
    return lift.select(mesh, manifest, SyntheticOracle(), click,
                       bvh=bvh, bundles=bundles)
