import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcmil.bag_model import BoundsError, ImageBag, PatchCoord, clamp_center, extract_patch


def test_constant_patch():
    bag = ImageBag("c", np.full((4, 4), 0.5), 0)
    patch = extract_patch(bag, PatchCoord(0, 0, 2))
    np.testing.assert_array_equal(patch.pixels, np.full((2, 2), 0.5))


def test_boundary_patch_is_legal():
    bag = ImageBag("b", np.zeros((1024, 1024)), 1)
    patch = extract_patch(bag, PatchCoord(1023 - 39, 0, 40))
    assert patch.pixels.shape == (40, 40)


def test_out_of_bounds_names_coordinate():
    bag = ImageBag("b", np.zeros((1024, 1024)), 1)
    with pytest.raises(BoundsError, match="row 1000"):
        extract_patch(bag, PatchCoord(1000, 0, 40))


def test_extraction_leaves_bag_alone():
    pixels = np.random.default_rng(0).uniform(size=(8, 8))
    bag = ImageBag("r", pixels, 0)
    patch = extract_patch(bag, PatchCoord(2, 3, 4))
    patch.pixels[:] = 0
    np.testing.assert_array_equal(bag.pixels, pixels)


@pytest.mark.parametrize("bad", [np.full((3, 3), 1.5), np.full((3, 3), -0.1)])
def test_rejects_out_of_range_intensity(bad):
    with pytest.raises(ValueError):
        ImageBag("x", bad, 0)


def test_rejects_bad_label():
    with pytest.raises(ValueError):
        ImageBag("x", np.zeros((3, 3)), 2)


@pytest.mark.parametrize(
    "center,expected",
    [((512.0, 512.0), (492, 492)), ((-5.3, 3.0), (0, 0)), ((1030.0, 1030.0), (984, 984))],
)
def test_clamp_center_examples(center, expected):
    c = clamp_center(*center, 40, 1024, 1024)
    assert (c.row, c.col, c.size) == (*expected, 40)


@given(
    r=st.integers(0, 20), c=st.integers(0, 30), size=st.integers(1, 10),
)
def test_extract_round_trip(r, c, size):
    h, w = 30, 40
    pixels = np.arange(h * w, dtype=float).reshape(h, w) / (h * w)
    bag = ImageBag("g", pixels, 0)
    if r + size > h or c + size > w:
        with pytest.raises(BoundsError):
            extract_patch(bag, PatchCoord(r, c, size))
        return
    patch = extract_patch(bag, PatchCoord(r, c, size))
    for i in range(size):
        for j in range(size):
            assert patch.pixels[i, j] == pixels[r + i, c + j]


@given(r=st.integers(0, 90), c=st.integers(0, 50), size=st.integers(1, 10))
def test_clamp_center_idempotent(r, c, size):
    h, w = 100, 60
    if r > h - size or c > w - size:
        return
    coord = PatchCoord(r, c, size)
    assert clamp_center(*coord.center(), size, h, w) == coord


@given(
    cr=st.floats(allow_nan=False, allow_infinity=True, width=64),
    cc=st.floats(allow_nan=False, allow_infinity=True, width=64),
    size=st.integers(1, 50),
)
def test_clamp_center_always_legal(cr, cc, size):
    h, w = 64, 80
    coord = clamp_center(cr, cc, size, h, w)
    assert 0 <= coord.row <= h - size
    assert 0 <= coord.col <= w - size
    assert isinstance(coord.row, int) and isinstance(coord.col, int)


def test_clamp_center_rejects_nan():
    with pytest.raises(ValueError):
        clamp_center(math.nan, 0.0, 4, 10, 10)
