import math

import cv2
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crossshot.media import (CropError, IngestError, VideoSource, area_pct, crop_with_padding, even_indices,
                             fingerprint, luminance, open_shot, padded_box, sharpest_frames, sharpness, shot_path,
                             write_png_sequence)


def test_even_indices_examples():
    assert even_indices(100, 5) == [1, 25, 50, 75, 100]
    assert even_indices(7, 5) == [1, 2, 4, 5, 7]
    assert even_indices(2, 5) == [1, 1, 1, 1, 2]
    assert even_indices(9, 1) == [1]


@given(st.integers(1, 500), st.integers(1, 40))
def test_even_indices_properties(f, n):
    idx = even_indices(f, n)
    assert len(idx) == n
    assert idx == sorted(idx)
    assert all(1 <= i <= f for i in idx)
    if n > 1:
        assert idx[0] == 1 and idx[-1] == f
        for j, i in enumerate(idx, start=1):
            assert i == math.floor(1 + (j - 1) * (f - 1) / (n - 1) + 1e-12)


def _brute_sharpness(img):
    y = img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114
    vals = []
    for r in range(1, y.shape[0] - 1):
        for c in range(1, y.shape[1] - 1):
            vals.append(y[r - 1, c] + y[r + 1, c] + y[r, c - 1] + y[r, c + 1] - 4 * y[r, c])
    m = sum(vals) / len(vals)
    return sum((v - m) ** 2 for v in vals) / len(vals)


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.integers(3, 9), st.integers(3, 9))
def test_sharpness_matches_brute_force(seed, h, w):
    img = np.random.default_rng(seed).integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    assert abs(sharpness(img) - _brute_sharpness(img.astype(np.float64))) < 1e-6


def test_flat_image_has_zero_sharpness():
    assert sharpness(np.full((10, 10, 3), 77, np.uint8)) == 0.0
    assert sharpness(np.zeros((2, 5, 3), np.uint8)) == 0.0


def test_luminance_weights():
    px = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], np.uint8)
    assert np.allclose(luminance(px), [[0.299 * 255, 0.587 * 255, 0.114 * 255]])


def test_padded_box_expands_and_clamps():
    assert padded_box((10, 10, 30, 50), 100, 100, 0.1) == (8, 6, 32, 54)
    assert padded_box((0, 0, 100, 100), 100, 100, 0.1) == (0, 0, 100, 100)
    with pytest.raises(CropError):
        padded_box((5, 5, 5, 10), 100, 100)
    with pytest.raises(CropError):
        padded_box((200, 200, 220, 230), 100, 100)


def test_crop_size_and_area():
    img = np.random.default_rng(1).integers(0, 256, size=(60, 80, 3), dtype=np.uint8)
    crop = crop_with_padding(img, (10, 10, 30, 40), 0.1, 32)
    assert crop.shape == (32, 32, 3)
    assert area_pct((0, 0, 40, 30), 80, 60) == 25.0


def test_fingerprint_depends_on_content_and_shape():
    a = np.zeros((4, 4, 3), np.uint8)
    assert fingerprint(a) == fingerprint(a.copy())
    assert fingerprint(a) != fingerprint(np.zeros((2, 8, 3), np.uint8))
    b = a.copy()
    b[0, 0, 0] = 1
    assert fingerprint(a) != fingerprint(b)


def test_png_sequence_round_trip(tmp_path):
    frames = [np.random.default_rng(i).integers(0, 256, size=(12, 16, 3), dtype=np.uint8) for i in range(3)]
    write_png_sequence(frames, tmp_path / "ep" / "shot_1")
    src = open_shot(tmp_path, "ep", 1)
    assert src.num_frames == 3 and src.resolution == (16, 12)
    assert all(np.array_equal(a, b) for a, b in zip(frames, src.frames))
    with pytest.raises(IndexError):
        src.frame(0)


def test_video_file_ingest(tmp_path):
    path = tmp_path / "ep" / "shot_2.mp4"
    path.parent.mkdir(parents=True)
    w = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), 8, (32, 24))
    if not w.isOpened():
        pytest.skip("no mp4 encoder available")
    for i in range(5):
        w.write(np.full((24, 32, 3), i * 40, np.uint8))
    w.release()
    assert shot_path(tmp_path, "ep", 2) == path
    src = open_shot(tmp_path, "ep", 2)
    assert src.num_frames == 5 and src.frame(1).shape == (24, 32, 3)


def test_missing_shot_raises(tmp_path):
    with pytest.raises(IngestError):
        open_shot(tmp_path, "ep", 1)
    with pytest.raises(IngestError):
        VideoSource("ep", 1, [])


def test_sharpest_frames_order_and_ties():
    flat = np.full((8, 8, 3), 10, np.uint8)
    noisy = np.random.default_rng(0).integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    src = VideoSource("ep", 1, [flat, noisy, flat.copy(), noisy.copy()])
    assert [s.index for s in sharpest_frames(src, 3)] == [2, 4, 1]
