import numpy as np
import pytest

from matlift import formats
from matlift.errors import OracleError, UnselectableMaterialError, ValidationError
from matlift.oracle import (
    Click, FileOracle, NoiseModel, OracleRequest, SyntheticOracle,
    duplicate_click_frame, make_request, sample_click,
)
from matlift.render import ViewBundle
from matlift.scene import Camera


def _bundle(material_raster, seed=0):
    mat = np.asarray(material_raster, dtype=np.int32)
    h, w = mat.shape
    cam = Camera(position=(0, 0, 4), look_at=(0, 0, 0), up=(0, 1, 0),
                 vertical_fov=0.7, resolution=(w, h))
    fg = mat >= 0
    rng = np.random.default_rng(seed)
    rgb = np.where(fg[..., None], rng.integers(30, 255, (h, w, 3)), 0).astype(np.uint8)
    depth = np.where(fg, 4.0, 0.0)
    return ViewBundle(camera=cam, rgb=rgb, depth=depth, material_id=mat)


@pytest.fixture()
def frames():
    # three 8x8 frames; materials 0/1/2 in vertical bands, row 0 background
    mat = np.zeros((8, 8), dtype=np.int32)
    mat[:, 3:6] = 1
    mat[:, 6:] = 2
    mat[0, :] = -1
    return {vid: _bundle(mat, seed=i) for i, vid in enumerate("ABC")}


def test_zero_noise_is_exact_ground_truth(frames):
    oracle = SyntheticOracle()
    click = Click("A", (4, 4))  # material 1
    request = make_request(["A", "B", "C"], click, duplicate=True)
    rasters = oracle.query(request, frames)
    assert len(rasters) == 3
    for vid, sim in zip(request.output_frames, rasters):
        mat = frames[vid].material_id
        assert np.array_equal(sim, (mat == 1).astype(np.float32))


def test_click_position_invariance(frames):
    oracle = SyntheticOracle()
    r1 = oracle.query(make_request(["A", "B", "C"], Click("A", (3, 2))), frames)
    r2 = oracle.query(make_request(["A", "B", "C"], Click("A", (5, 7))), frames)
    for a, b in zip(r1, r2):
        assert np.array_equal(a, b)


def test_noise_clamped_to_unit_interval(frames):
    oracle = SyntheticOracle(NoiseModel(pixel_sigma=0.2, seed=1))
    rasters = oracle.query(make_request(list("ABC"), Click("A", (4, 4))), frames)
    for sim in rasters:
        assert sim.min() >= 0.0 and sim.max() <= 1.0
        fg = frames["A"].foreground
        assert (sim[~fg] == 0.0).all()


def test_noise_reproducible_bit_exact(frames):
    request = make_request(list("ABC"), Click("A", (4, 4)))
    a = SyntheticOracle(NoiseModel(pixel_sigma=0.1, view_bias_sigma=0.05,
                                   flip_rate=0.5, seed=7)).query(request, frames)
    b = SyntheticOracle(NoiseModel(pixel_sigma=0.1, view_bias_sigma=0.05,
                                   flip_rate=0.5, seed=7)).query(request, frames)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)
    c = SyntheticOracle(NoiseModel(pixel_sigma=0.1, seed=8)).query(request, frames)
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_noise_independent_of_frame_order(frames):
    noise = NoiseModel(pixel_sigma=0.1, seed=3)
    ra = SyntheticOracle(noise).query(make_request(list("ABC"), Click("B", (4, 4))), frames)
    rb = SyntheticOracle(noise).query(make_request(list("CBA"), Click("B", (4, 4))), frames)
    # same view id gets the same corruption regardless of sequence order
    ids_a = make_request(list("ABC"), Click("B", (4, 4))).output_frames
    ids_b = make_request(list("CBA"), Click("B", (4, 4))).output_frames
    by_a = dict(zip(ids_a, ra))
    by_b = dict(zip(ids_b, rb))
    for vid in "ABC":
        assert np.array_equal(by_a[vid], by_b[vid])


def test_duplication_reduces_click_frame_noise(frames):
    noise = NoiseModel(pixel_sigma=0.05, seed=5)
    click = Click("A", (4, 4))
    with_dup = SyntheticOracle(noise).query(make_request(list("ABC"), click, True), frames)
    without = SyntheticOracle(noise).query(make_request(list("ABC"), click, False), frames)
    truth = (frames["A"].material_id == 1).astype(np.float32)
    fg = frames["A"].foreground
    err_dup = np.abs(with_dup[0] - truth)[fg].mean()
    err_raw = np.abs(without[0] - truth)[fg].mean()
    assert err_raw > err_dup


def test_negative_click_complements(frames):
    oracle = SyntheticOracle()
    pos = oracle.query(make_request(list("ABC"), Click("A", (4, 4), "positive")), frames)
    neg = oracle.query(make_request(list("ABC"), Click("A", (4, 4), "negative")), frames)
    for vid, p, n in zip(make_request(list("ABC"), Click("A", (4, 4))).output_frames, pos, neg):
        fg = frames[vid].foreground
        assert np.array_equal(n[fg], 1.0 - p[fg])
        assert (n[~fg] == 0).all()


def test_click_on_background_rejected(frames):
    oracle = SyntheticOracle()
    with pytest.raises(OracleError):
        oracle.query(make_request(list("ABC"), Click("A", (4, 0))), frames)


def test_unknown_view_rejected(frames):
    oracle = SyntheticOracle()
    with pytest.raises(ValidationError):
        make_request(list("ABC"), Click("Z", (4, 4)))
    request = make_request(list("ABC"), Click("A", (4, 4)))
    with pytest.raises(OracleError):
        oracle.query(request, {"A": frames["A"]})


def test_unequal_resolutions_rejected(frames):
    other = dict(frames)
    mat = np.zeros((4, 4), dtype=np.int32)
    other["C"] = _bundle(mat)
    with pytest.raises(OracleError):
        SyntheticOracle().query(make_request(list("ABC"), Click("A", (4, 4))), other)


def test_file_oracle(tmp_path, frames):
    for vid, bundle in frames.items():
        sim = (bundle.material_id == 2).astype(np.float32) * 0.9
        formats.write_simf(tmp_path / f"{vid}.simf", sim)
    oracle = FileOracle(tmp_path)
    rasters = oracle.query(make_request(list("ABC"), Click("A", (7, 4))), frames)
    for vid, sim in zip(make_request(list("ABC"), Click("A", (7, 4))).output_frames, rasters):
        expect = (frames[vid].material_id == 2).astype(np.float32) * 0.9
        assert np.allclose(sim, expect)


def test_file_oracle_missing_frame_names_view(tmp_path, frames):
    formats.write_simf(tmp_path / "A.simf", np.zeros((8, 8), dtype=np.float32))
    oracle = FileOracle(tmp_path)
    with pytest.raises(OracleError) as err:
        oracle.query(make_request(list("ABC"), Click("A", (4, 4))), frames)
    assert "'B'" in str(err.value) or "'C'" in str(err.value)


def test_oracle_counts_queries(frames):
    oracle = SyntheticOracle()
    assert oracle.query_count == 0
    oracle.query(make_request(list("ABC"), Click("A", (4, 4))), frames)
    oracle.query(make_request(list("ABC"), Click("A", (4, 4))), frames)
    assert oracle.query_count == 2


# ---------------------------------------------------------------------------
# duplicate_click_frame

def test_duplicate_click_frame_order():
    assert duplicate_click_frame(["A", "B", "C"], "B") == ["B", "B", "A", "C"]


def test_duplicate_single_frame():
    assert duplicate_click_frame(["A"], "A") == ["A", "A"]


def test_duplicate_unknown_id():
    with pytest.raises(ValidationError):
        duplicate_click_frame(["A", "B"], "Z")


def test_duplication_flag_off_keeps_sequence():
    request = make_request(["A", "B", "C"], Click("B", (0, 0)), duplicate=False)
    assert request.frames == ("A", "B", "C")
    assert request.output_frames == ("A", "B", "C")


def test_request_invariants():
    click = Click("B", (0, 0))
    with pytest.raises(ValidationError):
        OracleRequest(("A", "B", "C"), click, duplicated=True)  # not first
    with pytest.raises(ValidationError):
        OracleRequest(("B", "B", "B", "A"), click, duplicated=True)  # thrice
    ok = OracleRequest(("B", "B", "A", "C"), click, duplicated=True)
    assert ok.output_frames == ("B", "A", "C")


def test_output_count_matches_input_frames(frames):
    oracle = SyntheticOracle()
    click = Click("B", (4, 4))
    plain = oracle.query(make_request(list("ABC"), click, False), frames)
    dup = oracle.query(make_request(list("ABC"), click, True), frames)
    assert len(plain) == len(dup) == 3


# ---------------------------------------------------------------------------
# sample_click

def test_sample_click_full_frame_away_from_border():
    raster = np.zeros((64, 64), dtype=np.int32)
    rng = np.random.default_rng(0)
    for _ in range(200):
        click = sample_click(raster, 0, rng, "v")
        x, y = click.pixel
        assert 4 <= x <= 59 and 4 <= y <= 59


def test_sample_click_area_floor():
    raster = np.full((1024, 1024), -1, dtype=np.int32)
    raster[:10, :10] = 5  # 100 px < 150 floor, though 0.02% of 1024^2 is ~210
    with pytest.raises(UnselectableMaterialError):
        sample_click(raster, 5, np.random.default_rng(0), "v")


def test_sample_click_area_fraction_binds_on_large_frames():
    # 0.02% of 2048^2 = 839 px > 150 px floor
    raster = np.full((2048, 2048), -1, dtype=np.int32)
    raster[:20, :20] = 1  # 400 px, above the 150 floor but below 839
    with pytest.raises(UnselectableMaterialError):
        sample_click(raster, 1, np.random.default_rng(0), "v")


def test_sample_click_thin_stripe_rejected():
    raster = np.full((64, 64), -1, dtype=np.int32)
    raster[:, 10:13] = 2  # 3 px wide, 192 px total: survives area check
    with pytest.raises(UnselectableMaterialError) as err:
        sample_click(raster, 2, np.random.default_rng(0), "v")
    assert "erosion" in str(err.value)


def test_sample_click_lands_inside_material():
    raster = np.full((128, 128), -1, dtype=np.int32)
    raster[20:80, 30:90] = 7
    rng = np.random.default_rng(1)
    for _ in range(50):
        click = sample_click(raster, 7, rng, "view9")
        x, y = click.pixel
        assert raster[y, x] == 7
        assert 24 <= x <= 85 and 24 <= y <= 75  # 4 px inside the block
        assert click.view_id == "view9"
