import numpy as np
import pytest

from conftest import make_manifest
from matlift import assets
from matlift.errors import ValidationError
from matlift.oracle import SyntheticOracle
from matlift.render import ViewBundle, build_bvh, render_view
from matlift.scene import Camera
from matlift.segment import (
    AB_BINS, L_BINS, _allocate, color_modes, lab_bins, lab_to_rgb,
    lab_to_rgb_array, merge_matrix, merge_selections, propose_clicks,
    rgb_to_lab, rgb_to_lab_array, segment_object,
)


# ---------------------------------------------------------------------------
# color conversion

def test_white_point():
    lab = rgb_to_lab((255, 255, 255))
    assert lab.L == pytest.approx(100.0, abs=0.01)
    assert abs(lab.a) < 0.01 and abs(lab.b) < 0.01


def test_black():
    assert rgb_to_lab((0, 0, 0)).L == pytest.approx(0.0, abs=1e-9)


def test_round_trip_random_colors():
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, (1000, 3)).astype(np.uint8)
    back = lab_to_rgb_array(rgb_to_lab_array(rgb))
    err = np.abs(back.astype(int) - rgb.astype(int))
    assert err.max() <= 1  # <= 1/255 per channel


def test_lab_scalar_round_trip():
    for color in [(10, 200, 30), (128, 128, 128), (255, 0, 255)]:
        lab = rgb_to_lab(color)
        assert lab_to_rgb(lab) == color


def test_red_is_positive_a():
    lab = rgb_to_lab((220, 30, 30))
    assert lab.a > 20


# ---------------------------------------------------------------------------
# histogram

def test_bin_count_and_ranges():
    assert L_BINS * AB_BINS * AB_BINS == 1024
    lab = np.array([[0.0, -128.0, -128.0], [100.0, 127.0, 127.0],
                    [50.0, 0.0, 0.0]])
    bins = lab_bins(lab)
    assert bins[0] == 0
    assert bins[1] == 1023
    assert (0 <= bins).all() and (bins < 1024).all()


def test_allocate_largest_remainder():
    alloc = _allocate(np.array([80.0, 20.0]), 25)
    assert alloc.tolist() == [20, 5]


def test_allocate_sums_to_total():
    rng = np.random.default_rng(1)
    for _ in range(50):
        areas = rng.integers(1, 1000, size=int(rng.integers(1, 30)))
        total = int(rng.integers(1, 60))
        alloc = _allocate(areas.astype(float), total)
        assert alloc.sum() == total
        if len(areas) <= total:
            assert (alloc >= 1).all()


def test_allocate_min_one_when_possible():
    alloc = _allocate(np.array([1000.0, 1.0, 1.0]), 5)
    assert alloc.sum() == 5
    assert (alloc >= 1).all()
    assert alloc[0] == 3


def _flat_bundle(rgb_color, shape=(32, 32), border_bg=True):
    h, w = shape
    mat = np.zeros((h, w), dtype=np.int32)
    if border_bg:
        mat[0, :] = -1
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    rgb[mat >= 0] = rgb_color
    cam = Camera(position=(0, 0, 4), look_at=(0, 0, 0), up=(0, 1, 0),
                 vertical_fov=0.7, resolution=(w, h))
    return ViewBundle(camera=cam, rgb=rgb, depth=np.where(mat >= 0, 4.0, 0.0),
                      material_id=mat)


def test_single_color_single_mode():
    bundle = _flat_bundle((200, 60, 60))
    modes = color_modes([bundle])
    assert len(modes) == 1
    clicks = propose_clicks([bundle], ["a"], total=25)
    assert len(clicks) == 25
    for c in clicks:
        x, y = c.pixel
        assert bundle.material_id[y, x] >= 0


def test_two_colors_area_proportional():
    h, w = 40, 50
    mat = np.zeros((h, w), dtype=np.int32)
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    split = int(w * 0.8)
    rgb[:, :split] = (200, 50, 50)    # 80% red
    rgb[:, split:] = (50, 60, 200)    # 20% blue
    cam = Camera(position=(0, 0, 4), look_at=(0, 0, 0), up=(0, 1, 0),
                 vertical_fov=0.7, resolution=(w, h))
    bundle = ViewBundle(camera=cam, rgb=rgb, depth=np.full((h, w), 4.0),
                        material_id=mat)
    clicks = propose_clicks([bundle], ["a"], total=25)
    reds = sum(1 for c in clicks if rgb[c.pixel[1], c.pixel[0]][0] == 200)
    assert reds == 20 and len(clicks) - reds == 5


def test_no_foreground_is_error():
    mat = np.full((8, 8), -1, dtype=np.int32)
    cam = Camera(position=(0, 0, 4), look_at=(0, 0, 0), up=(0, 1, 0),
                 vertical_fov=0.7, resolution=(8, 8))
    bundle = ViewBundle(camera=cam, rgb=np.zeros((8, 8, 3), np.uint8),
                        depth=np.zeros((8, 8)), material_id=mat)
    with pytest.raises(ValidationError):
        propose_clicks([bundle], ["a"], total=5)


def test_clicks_deterministic_with_rng():
    bundle = _flat_bundle((90, 160, 220))
    a = propose_clicks([bundle], ["a"], 10, np.random.default_rng(5))
    b = propose_clicks([bundle], ["a"], 10, np.random.default_rng(5))
    assert [c.pixel for c in a] == [c.pixel for c in b]


def test_default_click_budget_is_25():
    import inspect
    assert inspect.signature(propose_clicks).parameters["total"].default == 25
    assert inspect.signature(segment_object).parameters["total_clicks"].default == 25
    assert inspect.signature(segment_object).parameters["tau"].default == 0.75


# ---------------------------------------------------------------------------
# merging

def test_merge_identical_masks():
    m = np.random.default_rng(2).random((2, 16, 16)) > 0.5
    groups = merge_selections([m, m.copy()], tau=0.75)
    assert len(groups) == 1
    assert groups[0].members == (0, 1)


def test_merge_disjoint_masks():
    a = np.zeros((8, 8), dtype=bool)
    b = np.zeros((8, 8), dtype=bool)
    a[:4], b[4:] = True, True
    groups = merge_selections([a, b], tau=0.75)
    assert len(groups) == 2


def test_merge_survivor_is_larger_area():
    big = np.zeros((10, 10), dtype=bool)
    big[:8] = True
    small = big.copy()
    small[7] = False  # subset, IoU 70/80 = 0.875 >= 0.75
    groups = merge_selections([small, big], tau=0.75)
    assert len(groups) == 1
    assert groups[0].representative == 1


def test_merge_matrix_properties():
    rng = np.random.default_rng(3)
    masks = [rng.random((12, 12)) > 0.5 for _ in range(5)]
    m = merge_matrix(masks)
    assert np.allclose(m, m.T)
    assert np.allclose(np.diag(m), 1.0)
    assert (m >= 0).all() and (m <= 1).all()


def test_merge_empty_list_is_error():
    with pytest.raises(ValidationError):
        merge_selections([], tau=0.75)


def test_merge_permutation_insensitive():
    rng = np.random.default_rng(4)
    base = [rng.random((20, 20)) > 0.6 for _ in range(3)]
    masks = [base[0], base[0] ^ (rng.random((20, 20)) > 0.97), base[1], base[2]]
    groups_a = merge_selections(masks, tau=0.75)
    perm = [2, 0, 3, 1]
    groups_b = merge_selections([masks[i] for i in perm], tau=0.75)
    # same grouping up to relabeling
    part_a = sorted(tuple(sorted(g.members)) for g in groups_a)
    part_b = sorted(tuple(sorted(perm[i] for i in g.members)) for g in groups_b)
    assert part_a == part_b


def test_three_materials_six_clicks_three_groups(demo_scene):
    mesh, bvh, manifest, bundles = demo_scene
    oracle = SyntheticOracle()
    from conftest import click_on_material
    from matlift.lift import select
    masks = []
    eval_cams = manifest.cameras[:4]
    for material in (0, 0, 1, 1, 2, 2):
        click = click_on_material(bundles, manifest, material,
                                  seed=material * 7 + len(masks))
        session = select(mesh, manifest, oracle, click, bvh=bvh, bundles=bundles)
        masks.append(np.concatenate(
            [session.reconstruct(cam)[0].ravel() for cam in eval_cams]))
    groups = merge_selections(masks, tau=0.75)
    assert len(groups) == 3
    partition = sorted(tuple(g.members) for g in groups)
    assert partition == [(0, 1), (2, 3), (4, 5)]


# ---------------------------------------------------------------------------
# segment_object

def test_segment_three_materials(demo_scene):
    mesh, bvh, manifest, bundles = demo_scene
    result = segment_object(mesh, manifest, SyntheticOracle(), seed=0,
                            bvh=bvh, bundles=bundles)
    assert len(result.groups) == 3
    # ground-truth material per cloud point, via each point's source pixel
    gt = _point_materials(manifest, bundles)
    assert gt.shape == result.point_labels.shape
    # map group -> dominant material, then check per-material IoU
    for material in range(3):
        overlaps = [
            np.logical_and(result.point_labels == g, gt == material).sum()
            for g in range(len(result.groups))
        ]
        g = int(np.argmax(overlaps))
        inter = np.logical_and(result.point_labels == g, gt == material).sum()
        union = np.logical_or(result.point_labels == g, gt == material).sum()
        assert inter / union >= 0.9


def _point_materials(manifest, bundles):
    mats = []
    for vid in manifest.ids:
        bundle = bundles[vid]
        fg = bundle.foreground
        mats.append(bundle.material_id[fg])
    return np.concatenate(mats)


def test_segment_single_material():
    mesh = assets.uv_sphere_mesh(radius=1.0, n_lat=12, n_lon=18)
    manifest = make_manifest(mesh, 6, 96)
    bvh = build_bvh(mesh)
    bundles = {vid: render_view(mesh, bvh, cam)
               for vid, cam in zip(manifest.ids, manifest.cameras)}
    result = segment_object(mesh, manifest, SyntheticOracle(), seed=1,
                            bvh=bvh, bundles=bundles)
    assert len(result.groups) == 1
    assert (result.point_labels == 0).all()  # whole foreground claimed
