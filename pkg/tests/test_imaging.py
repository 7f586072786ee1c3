import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from shm import imaging
from shm.imaging import ShapeError

from oracles import bilinear_naive

unit = st.floats(0.0, 1.0, allow_nan=False)


def rgb(h, w):
    return arrays(np.float64, (h, w, 3), elements=unit)


def masks(max_side=9):
    return st.integers(1, max_side).flatmap(
        lambda h: st.integers(1, max_side).flatmap(lambda w: arrays(bool, (h, w))))


def test_composite_extremes_and_midpoint():
    fg = np.full((2, 2, 3), 0.8)
    bg = np.full((2, 2, 3), 0.4)
    assert np.array_equal(imaging.composite(fg, bg, np.ones((2, 2))), fg)
    assert np.array_equal(imaging.composite(fg, bg, np.zeros((2, 2))), bg)
    np.testing.assert_allclose(imaging.composite(fg, bg, np.full((2, 2), 0.5)), 0.6, atol=1e-15)


def test_composite_names_bad_operand():
    fg = np.zeros((4, 4, 3))
    with pytest.raises(ShapeError, match="alpha"):
        imaging.composite(fg, fg, np.zeros((4, 5)))
    with pytest.raises(ShapeError, match="bg"):
        imaging.composite(fg, np.zeros((3, 4, 3)), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        imaging.composite(fg, fg, np.full((4, 4), 1.5))


@settings(max_examples=40, deadline=None)
@given(rgb(3, 4), rgb(3, 4), arrays(np.float64, (3, 4), elements=unit),
       arrays(np.float64, (3, 4), elements=unit), unit)
def test_composite_range_and_linearity(fg, bg, a1, a2, lam):
    c1, c2 = imaging.composite(fg, bg, a1), imaging.composite(fg, bg, a2)
    assert c1.min() >= 0 and c1.max() <= 1
    mixed = imaging.composite(fg, bg, lam * a1 + (1 - lam) * a2)
    np.testing.assert_allclose(mixed, lam * c1 + (1 - lam) * c2, atol=1e-12)


def test_dilate_erode_examples():
    m = np.zeros((5, 5), bool)
    m[2, 2] = True
    block = imaging.dilate(m, 1)
    assert block.sum() == 9 and block[1:4, 1:4].all()
    assert np.array_equal(imaging.erode(block, 1), m)
    for r in (0, 3):
        assert imaging.dilate(np.ones((4, 4), bool), r).all()
        assert not imaging.erode(np.zeros((4, 4), bool), r).any()
    assert np.array_equal(imaging.dilate(m, 0), m)
    assert np.array_equal(imaging.erode(m, 0), m)


def test_radius_validation():
    with pytest.raises(ValueError):
        imaging.dilate(np.zeros((3, 3), bool), -1)
    with pytest.raises(ValueError):
        imaging.erode(np.zeros((3, 3), bool), 1.5)


@settings(max_examples=60, deadline=None)
@given(masks(), st.integers(0, 4))
def test_duality(m, r):
    assert np.array_equal(imaging.erode(m, r), ~imaging.dilate(~m, r))


def test_dilate_matches_brute_force_chebyshev():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.random((7, 6)) < 0.15
        r = int(rng.integers(1, 4))
        ys, xs = np.nonzero(m)
        yy, xx = np.mgrid[:7, :6]
        want = np.zeros_like(m)
        for y, x in zip(ys, xs):
            want |= (np.abs(yy - y) <= r) & (np.abs(xx - x) <= r)
        assert np.array_equal(imaging.dilate(m, r), want)


@settings(max_examples=40, deadline=None)
@given(masks(6), st.integers(0, 3), st.data())
def test_dilation_monotone(m1, r, data):
    extra = data.draw(arrays(bool, m1.shape))
    m2 = m1 | extra
    d1, d2 = imaging.dilate(m1, r), imaging.dilate(m2, r)
    assert not (d1 & ~d2).any()


def test_resize_constant_and_identity():
    img = np.full((5, 7, 3), 0.3)
    np.testing.assert_allclose(imaging.resize(img, 11, 3), 0.3, atol=1e-15)
    rng = np.random.default_rng(1)
    x = rng.random((6, 5))
    assert np.array_equal(imaging.resize(x, 6, 5), x)


def test_resize_two_by_four_monotone():
    out = imaging.resize(np.array([[0.0, 1.0], [0.0, 1.0]]), 2, 4)
    np.testing.assert_allclose(out, bilinear_naive(np.array([[0.0, 1.0], [0.0, 1.0]]), 2, 4), atol=1e-15)
    np.testing.assert_allclose(out[0], [0.0, 0.25, 0.75, 1.0])
    assert np.all(np.diff(out[0]) > 0)


@pytest.mark.parametrize("shape,target", [((5, 7), (9, 4)), ((4, 4, 3), (7, 10)), ((9, 3), (2, 2))])
def test_resize_matches_oracle(shape, target):
    x = np.random.default_rng(2).random(shape)
    np.testing.assert_allclose(imaging.resize(x, *target), bilinear_naive(x, *target), atol=1e-12)


def test_crop_flip_rotate_identities():
    x = np.random.default_rng(3).random((6, 8, 3))
    assert np.array_equal(imaging.crop(x, 0, 0, 6, 8), x)
    assert np.array_equal(imaging.hflip(imaging.hflip(x)), x)
    assert np.abs(imaging.rotate_small(x, 0.0) - x).max() <= 1e-7
    with pytest.raises(ValueError):
        imaging.crop(x, 2, 2, 6, 8)
    with pytest.raises(ValueError):
        imaging.rotate_small(x, 60)


def test_rotate_keeps_constant_and_range():
    x = np.full((9, 9), 0.4)
    np.testing.assert_allclose(imaging.rotate_small(x, 10), 0.4, atol=1e-12)
    y = np.random.default_rng(4).random((9, 11, 3))
    r = imaging.rotate_small(y, -7.5)
    assert r.shape == y.shape and r.min() >= 0 and r.max() <= 1


def test_primitives_are_pure():
    x = np.random.default_rng(5).random((6, 6, 3))
    before = x.copy()
    imaging.resize(x, 3, 3)
    imaging.rotate_small(x, 5)
    imaging.hflip(x)
    assert np.array_equal(x, before)
    assert np.array_equal(imaging.rotate_small(x, 5), imaging.rotate_small(x, 5))


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    img = imaging.quantize(rng.random((5, 4, 3)), 8)
    imaging.save_png(tmp_path / "i.png", img)
    assert np.array_equal(imaging.load_png(tmp_path / "i.png"), img)
    a = imaging.quantize(rng.random((5, 4)), 16)
    imaging.save_png(tmp_path / "a.png", a, bits=16)
    np.testing.assert_allclose(imaging.load_png(tmp_path / "a.png"), a, atol=1e-15)
    with pytest.raises(ShapeError):
        imaging.save_png(tmp_path / "x.png", img, bits=16)
