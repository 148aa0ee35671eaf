import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from matlift.errors import ValidationError
from matlift.postprocess import (
    connected_components, dilate, erode, fill_holes, remove_sprinkles,
)

masks_st = hnp.arrays(bool, hnp.array_shapes(min_dims=2, max_dims=2,
                                             min_side=1, max_side=24))


def test_erode_radius_zero_is_identity():
    m = np.random.default_rng(0).random((20, 20)) > 0.5
    assert np.array_equal(erode(m, 0), m)


def test_erode_small_square_vanishes():
    m = np.zeros((5, 5), dtype=bool)
    m[:] = True
    assert not erode(m, 4).any()


def test_erode_solid_square_geometry():
    m = np.ones((100, 100), dtype=bool)
    out = erode(m, 4)
    assert out.sum() == 92 * 92
    assert out[4:96, 4:96].all()
    assert not out[:4].any() and not out[:, :4].any()


def test_erode_rejects_negative_radius():
    with pytest.raises(ValidationError):
        erode(np.ones((4, 4), dtype=bool), -1)


def test_components_diagonal_pixels_are_separate():
    m = np.zeros((4, 4), dtype=bool)
    m[0, 0] = m[1, 1] = True
    comp = connected_components(m)
    assert comp.count == 2


def test_components_empty_mask():
    comp = connected_components(np.zeros((5, 7), dtype=bool))
    assert comp.count == 0
    assert comp.areas.size == 0
    assert (comp.labels == -1).all()


def test_components_areas_sum_to_set_pixels():
    m = np.random.default_rng(3).random((64, 64)) > 0.6
    comp = connected_components(m)
    assert comp.areas.sum() == m.sum()
    # labels dense in [0, count)
    present = np.unique(comp.labels[comp.labels >= 0])
    assert np.array_equal(present, np.arange(comp.count))


def test_components_raster_order_labels():
    m = np.zeros((3, 6), dtype=bool)
    m[0, 4] = True   # first in raster order
    m[2, 0] = True
    comp = connected_components(m)
    assert comp.labels[0, 4] == 0
    assert comp.labels[2, 0] == 1


def test_fill_holes_donut():
    m = np.ones((7, 7), dtype=bool)
    m[3, 3] = False
    assert fill_holes(m, 10).all()


def test_fill_holes_keeps_border_background():
    m = np.zeros((6, 6), dtype=bool)
    m[2:4, 2:4] = True
    out = fill_holes(m, 1000)
    assert np.array_equal(out, m)  # outside touches the border, never filled


def test_fill_holes_respects_max_area():
    m = np.ones((10, 10), dtype=bool)
    m[4:7, 4:7] = False  # 9-px hole
    assert np.array_equal(fill_holes(m, 8), m)
    assert fill_holes(m, 9).all()


def test_remove_sprinkles_speck():
    m = np.zeros((8, 8), dtype=bool)
    m[1, 1] = True
    m[4:7, 4:7] = True
    out = remove_sprinkles(m, 5)
    assert not out[1, 1]
    assert out[4:7, 4:7].all()


def test_zero_thresholds_are_identity():
    m = np.random.default_rng(1).random((16, 16)) > 0.5
    assert np.array_equal(fill_holes(m, 0), m)
    assert np.array_equal(remove_sprinkles(m, 0), m)


@settings(max_examples=40, deadline=None)
@given(masks_st, st.integers(min_value=0, max_value=30))
def test_fill_holes_monotone_and_idempotent(m, max_area):
    out = fill_holes(m, max_area)
    assert (out | m).sum() == out.sum()  # non-decreasing
    assert np.array_equal(fill_holes(out, max_area), out)


@settings(max_examples=40, deadline=None)
@given(masks_st, st.integers(min_value=0, max_value=30))
def test_remove_sprinkles_monotone_and_idempotent(m, min_area):
    out = remove_sprinkles(m, min_area)
    assert (out & m).sum() == out.sum()  # non-increasing
    assert np.array_equal(remove_sprinkles(out, min_area), out)


@settings(max_examples=30, deadline=None)
@given(masks_st, st.integers(min_value=1, max_value=3))
def test_opening_idempotence(m, r):
    opened = erode(dilate(erode(m, r), r), r)
    assert np.array_equal(opened, erode(m, r))
