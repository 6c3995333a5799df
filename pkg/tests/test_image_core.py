import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import fillfront_scan
from zinpaint.image_core import (
    MaskImage,
    PatchKey,
    RasterImage,
    clamp_center,
    compute_fillfront,
    extract_patch,
)


def _gray(h, w, seed=0):
    return RasterImage(np.random.default_rng(seed).integers(0, 256, (h, w), dtype=np.uint8))


def test_raster_shapes():
    img = RasterImage(np.zeros((4, 5), np.uint8))
    assert (img.height, img.width, img.channels) == (4, 5, 1)
    assert RasterImage(np.zeros((4, 5, 3), np.uint8)).channels == 3
    with pytest.raises(ValueError):
        RasterImage(np.zeros((4, 5, 2), np.uint8))
    with pytest.raises(ValueError):
        RasterImage(np.zeros((4, 5), np.float32))


def test_mask_from_gray_threshold():
    m = MaskImage.from_gray(np.array([[0, 127, 128, 255]], np.uint8))
    assert m.known.tolist() == [[False, False, True, True]]
    assert m.unknown_count() == 2
    assert MaskImage.from_gray(m.to_gray()).known.tolist() == m.known.tolist()


def test_patch_key_row_major():
    assert PatchKey(3, 2).encode(10) == 23
    assert PatchKey.decode(23, 10) == PatchKey(3, 2)
    keys = [PatchKey(x, y).encode(7) for y in range(3) for x in range(7)]
    assert keys == sorted(keys)


def test_extract_fully_known():
    img = _gray(20, 20)
    v = extract_patch(img, MaskImage(np.ones((20, 20), bool)), (10, 10), 9)
    assert v.known.shape == (9, 9) and v.known.all()
    assert np.array_equal(v.values[:, :, 0], img.data[6:15, 6:15, 0])


def test_extract_fully_unknown():
    v = extract_patch(_gray(20, 20), MaskImage(np.zeros((20, 20), bool)), (10, 10), 9)
    assert v.known.size == 81 and not v.known.any()
    assert not v.values.any()


def test_extract_checkerboard():
    img = _gray(3, 3)
    board = (np.add.outer(np.arange(3), np.arange(3)) % 2 == 0)
    v = extract_patch(img, MaskImage(board), (1, 1), 3)
    for r in range(3):
        for c in range(3):
            assert v.known[r, c] == board[r, c]
            assert v.values[r, c, 0] == (img.data[r, c, 0] if board[r, c] else 0)


def test_extract_is_pure():
    img = _gray(12, 12)
    mask = MaskImage(np.random.default_rng(3).random((12, 12)) > 0.4)
    before = img.data.copy(), mask.known.copy()
    extract_patch(img, mask, (5, 6), 5)
    assert np.array_equal(img.data, before[0]) and np.array_equal(mask.known, before[1])


@pytest.mark.parametrize("center", [(3, 10), (10, 3), (16, 10), (10, 16), (-1, 5)])
def test_extract_out_of_bounds(center):
    with pytest.raises(IndexError):
        extract_patch(_gray(20, 20), MaskImage(np.ones((20, 20), bool)), center, 9)


def test_extract_rejects_even_k():
    with pytest.raises(ValueError):
        extract_patch(_gray(20, 20), MaskImage(np.ones((20, 20), bool)), (10, 10), 8)


def test_clamp_center():
    assert clamp_center((0, 0), 9, 20, 30) == (4, 4)
    assert clamp_center((19, 29), 9, 20, 30) == (15, 25)
    assert clamp_center((10, 12), 9, 20, 30) == (10, 12)


def test_fillfront_fully_known():
    assert len(compute_fillfront(MaskImage(np.ones((6, 7), bool)))) == 0


def test_fillfront_single_hole():
    known = np.ones((7, 7), bool)
    known[3, 4] = False
    got = {tuple(p) for p in compute_fillfront(MaskImage(known))}
    assert got == {(2, 4), (4, 4), (3, 3), (3, 5)}


def test_fillfront_block():
    known = np.ones((10, 10), bool)
    known[3:7, 3:7] = False
    got = {tuple(p) for p in compute_fillfront(MaskImage(known))}
    assert got == fillfront_scan(known)
    assert len(got) == 16
    # corners of the ring only touch diagonally
    assert (2, 2) not in got


def test_fillfront_row_major():
    known = np.random.default_rng(5).random((15, 17)) > 0.3
    pts = compute_fillfront(MaskImage(known))
    assert [tuple(p) for p in pts] == sorted(tuple(p) for p in pts)


@settings(max_examples=150, deadline=None)
@given(arrays(np.bool_, st.tuples(st.integers(1, 64), st.integers(1, 64))))
def test_fillfront_matches_scan(known):
    got = {tuple(p) for p in compute_fillfront(MaskImage(known))}
    assert got == fillfront_scan(known)
