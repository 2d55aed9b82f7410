import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from objstitch.core import (
    DetectedObject,
    MaskDecodeError,
    PointMatchSet,
    Raster,
    bbox_mask,
    decode_object_mask,
    in_mask,
    mask_bbox,
    overlap_mask,
    rasterize_polygon,
    rle_decode,
    rle_encode,
    rle_from_string,
    rle_to_string,
)


def test_raster_normalises_and_freezes():
    r = Raster(np.zeros((3, 4)), np.ones((3, 4)))
    assert r.data.shape == (3, 4, 1) and r.mask.dtype == bool
    assert (r.height, r.width, r.channels) == (3, 4, 1)
    with pytest.raises(ValueError):
        r.data[0, 0, 0] = 1.0


@pytest.mark.parametrize("data,mask", [
    (np.zeros((3, 4, 2)), np.ones((3, 4))),
    (np.zeros((3, 4)), np.ones((4, 3))),
    (np.zeros((0, 4)), np.ones((0, 4))),
])
def test_raster_rejects_bad_shapes(data, mask):
    with pytest.raises(ValueError):
        Raster(data, mask)


def test_rle_string_hand_examples():
    # 2x2 mask, column-major: 0 | 1 1 | 0
    assert rle_to_string([1, 2, 1]) == "121"
    # the fourth count is stored as a negative delta (1 - 5 = -4)
    assert rle_to_string([0, 5, 3, 1]) == "053L"
    assert rle_from_string("053L") == [0, 5, 3, 1]
    m = rle_decode("121", 2, 2)
    assert m.tolist() == [[False, True], [True, False]]


@given(arrays(bool, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_rle_round_trip(mask):
    counts = rle_encode(mask)
    assert sum(counts) == mask.size
    assert np.array_equal(rle_decode(counts, *mask.shape), mask)
    assert np.array_equal(rle_decode(rle_to_string(counts), *mask.shape), mask)


def test_rle_errors():
    with pytest.raises(MaskDecodeError):
        rle_decode([1, 2], 2, 2)
    with pytest.raises(MaskDecodeError):
        rle_from_string("1\x7f")
    with pytest.raises(MaskDecodeError):
        decode_object_mask({"size": [3, 3], "counts": [9]}, (2, 2))


def test_bbox_mask_is_half_open_on_pixel_centres():
    m = bbox_mask((1, 1, 2, 3), 5, 5)
    assert mask_bbox(m) == (1, 1, 2, 3)
    # a box edge at 1.4 excludes pixel 1 (centre 1.5 is inside), at 1.6 it does not
    assert mask_bbox(bbox_mask((1.4, 0, 1, 1), 3, 3)) == (1, 0, 1, 1)
    assert mask_bbox(bbox_mask((1.6, 0, 1, 1), 3, 3)) == (2, 0, 1, 1)


def test_polygon_rectangle():
    m = rasterize_polygon([1, 1, 4, 1, 4, 3, 1, 3], 5, 6)
    assert mask_bbox(m) == (1, 1, 3, 2) and m.sum() == 6


coord = st.floats(0.13, 11.87, allow_nan=False)


@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=6))
def test_polygon_matches_shapely_point_test(pts):
    shapely = pytest.importorskip("shapely")
    from shapely.geometry import Point, Polygon

    poly = Polygon(pts)
    if not poly.is_valid or poly.area < 1e-6:
        return
    flat = [v for p in pts for v in p]
    m = rasterize_polygon(flat, 12, 12)
    for y in range(12):
        for x in range(12):
            c = Point(x + 0.5, y + 0.5)
            if poly.exterior.distance(c) < 1e-9:
                continue
            assert m[y, x] == poly.contains(c)


def test_detected_object_clips_mask_to_box():
    full = np.ones((6, 6), bool)
    o = DetectedObject(0, "person", 0.5, (1, 1, 2, 2), full)
    assert o.area == 4 and o.key == (0, 0)
    with pytest.raises(ValueError):
        DetectedObject(0, "person", 1.5, (1, 1, 2, 2), full)
    with pytest.raises(ValueError):
        DetectedObject(0, "person", 0.5, (1, 1, 2, 2), np.zeros((6, 6), bool))


def test_from_box_with_rle_segmentation():
    seg = {"size": [4, 4], "counts": rle_encode(np.eye(4, dtype=bool))}
    o = DetectedObject.from_box(1, "car", [0, 0, 4, 4], (4, 4), segmentation=seg)
    assert o.area == 4 and o.bbox == (0, 0, 4, 4)


def test_point_match_set_and_in_mask():
    ms = PointMatchSet([[0, 0], [2.4, 1.6]], [[1, 1], [3, 3]])
    assert len(ms) == 2 and ms.swapped().p.tolist() == [[1, 1], [3, 3]]
    ms.check_bounds((3, 3), (4, 4))
    with pytest.raises(ValueError):
        ms.check_bounds((3, 3), (3, 3))
    m = np.zeros((3, 3), bool)
    m[2, 2] = True
    assert in_mask(m, ms.p).tolist() == [False, True]
    with pytest.raises(ValueError):
        PointMatchSet([[0, 0]], [[0, 0], [1, 1]])


def test_rle_runs_on_a_single_row():
    m = rle_decode([4, 2], 1, 6)
    assert [(int(x), int(y)) for y, x in np.argwhere(m)] == [(4, 0), (5, 0)]


def test_unit_square_polygon_covers_four_pixels():
    m = rasterize_polygon([0, 0, 2, 0, 2, 2, 0, 2], 4, 4)
    assert sorted((int(x), int(y)) for y, x in np.argwhere(m)) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_overlap_mask():
    def r(mask):
        return Raster(np.zeros(mask.shape), mask)

    full = np.ones((2, 6), bool)
    assert overlap_mask(r(full), r(full)).all()
    left = np.zeros((2, 6), bool)
    left[:, :3] = True
    assert not overlap_mask(r(left), r(~left)).any()
    right = np.zeros((2, 6), bool)
    right[:, 2:] = True
    assert np.argwhere(overlap_mask(r(left), r(right))[0]).ravel().tolist() == [2]
    with pytest.raises(ValueError):
        overlap_mask(r(full), r(np.ones((3, 6), bool)))
