import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from shm import trimap
from shm.trimap import BG, FG, UNK

from oracles import blobby


def disk(n=41, radius=12.0):
    yy, xx = np.mgrid[:n, :n]
    return (np.hypot(yy - n // 2, xx - n // 2) <= radius).astype(float)


def test_sharp_disk_band_is_annulus():
    a = disk()
    lab = trimap.make_trimap(a, 3)
    inside = a > 0
    # Chebyshev distance to the nearest pixel of the other class
    d_in = ndimage.distance_transform_cdt(inside, metric="chessboard")
    d_out = ndimage.distance_transform_cdt(~inside, metric="chessboard")
    dist = np.where(inside, d_in, d_out)
    np.testing.assert_array_equal(lab == UNK, dist <= 3)
    # about 6 px wide; curvature lets a diagonal neighbour add one pixel
    row = lab[20]
    left = (row[:20] == UNK).sum()
    assert 6 <= left <= 7 and (row[20:] == UNK).sum() == left


def test_all_ones_is_foreground():
    assert (trimap.make_trimap(np.ones((10, 12)), 4) == FG).all()
    assert (trimap.make_trimap(np.zeros((10, 12)), 4) == BG).all()


def test_half_alpha_always_unknown():
    a = np.zeros((15, 15))
    a[7, 7] = 0.5
    for r in range(1, 8):
        assert trimap.make_trimap(a, r)[7, 7] == UNK


def test_radius_must_be_positive():
    with pytest.raises(ValueError):
        trimap.make_trimap(np.zeros((4, 4)), 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 10), st.integers(1, 10))
def test_partition_containment_monotone(seed, r1, r2):
    a = blobby(np.random.default_rng(seed), 24, 24)
    lo, hi = sorted((r1, r2))
    l1, l2 = trimap.make_trimap(a, lo), trimap.make_trimap(a, hi)
    assert set(np.unique(l1)) <= {FG, BG, UNK}
    frac = (a > trimap.PURE_TOL) & (a < 1 - trimap.PURE_TOL)
    assert (l1[frac] == UNK).all()
    assert not ((l1 == UNK) & (l2 != UNK)).any()


def test_onehot_and_decode():
    lab = np.array([[FG, BG], [UNK, FG]], dtype=np.uint8)
    oh = trimap.encode_onehot(lab)
    assert tuple(oh[0, 0]) == (1, 0, 0)
    assert tuple(oh[1, 0]) == (0, 0, 1)
    assert np.array_equal(trimap.decode(oh), lab)
    with pytest.raises(ValueError):
        trimap.encode_onehot(np.array([[3]]))


def test_softmax_examples():
    np.testing.assert_allclose(trimap.softmax3(np.zeros(3)), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(trimap.softmax3(np.array([math.log(2), 0, 0])), [0.5, 0.25, 0.25],
                               atol=1e-15)
    p = trimap.softmax3(np.array([1000.0, 0, 0]))
    assert np.isfinite(p).all() and p[0] == 1.0
    pt = trimap.softmax3(torch.tensor([[[[1000.0]], [[0.0]], [[0.0]]]]), axis=1)
    assert torch.isfinite(pt).all()


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 5, 3), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_normalised_and_shift_invariant(z, c):
    p = trimap.softmax3(z)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(trimap.softmax3(z + c), p, atol=1e-6)


def test_softmax_rejects_bad_input():
    with pytest.raises(ValueError):
        trimap.softmax3(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        trimap.softmax3(np.array([np.nan, 0, 0]))


def test_png_codes_roundtrip(tmp_path):
    lab = trimap.make_trimap(disk(21, 6), 2)
    trimap.save_trimap_png(tmp_path / "t.png", lab)
    assert np.array_equal(trimap.load_trimap_png(tmp_path / "t.png"), lab)
