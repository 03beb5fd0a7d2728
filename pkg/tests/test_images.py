"""Image loading tests: PGM identity, error offsets, PNG luminance parity."""

from __future__ import annotations

import io

import numpy as np
import pytest
from PIL import Image

from storylens.images import GrayImage, ImageFormatError, load_gray, save_pgm


def test_pgm_identity_read(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0]))
    img = load_gray(path)
    assert (img.width, img.height) == (2, 2)
    assert img.data == bytes([0, 255, 255, 0])


def test_pgm_header_comments(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n# a comment\n 2 # inline\n2\n255\n" + bytes(4))
    img = load_gray(path)
    assert (img.width, img.height) == (2, 2)


def test_truncated_header_reports_byte_offset(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n2 ")
    with pytest.raises(ImageFormatError, match=r"byte \d+"):
        load_gray(path)


def test_truncated_raster_reports_bytes(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
    with pytest.raises(ImageFormatError, match="truncated raster"):
        load_gray(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    with pytest.raises(ImageFormatError):
        load_gray(path)


def test_wide_maxval_rejected(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(ImageFormatError, match="maxval"):
        load_gray(path)


def test_unknown_format_rejected(tmp_path):
    path = tmp_path / "t.bin"
    path.write_bytes(b"GIF89a whatever")
    with pytest.raises(ImageFormatError, match="byte 0"):
        load_gray(path)


def test_png_gray_matches_pgm(tmp_path):
    rng = np.random.default_rng(3)
    raster = rng.integers(0, 256, (9, 7), dtype=np.uint8)
    pgm = tmp_path / "r.pgm"
    save_pgm(GrayImage.from_array(raster), pgm)
    png = tmp_path / "r.png"
    Image.fromarray(raster, mode="L").save(png)
    a = load_gray(pgm)
    b = load_gray(png)
    assert a.data == b.data
    assert (a.width, a.height) == (b.width, b.height)


def test_png_rgb_uses_integer_bt601(tmp_path):
    rgb = np.zeros((1, 3, 3), np.uint8)
    rgb[0, 0] = (255, 0, 0)
    rgb[0, 1] = (0, 255, 0)
    rgb[0, 2] = (12, 200, 34)
    png = tmp_path / "c.png"
    Image.fromarray(rgb, mode="RGB").save(png)
    img = load_gray(png)
    expected = [
        (77 * 255 + 128) >> 8,
        (150 * 255 + 128) >> 8,
        (77 * 12 + 150 * 200 + 29 * 34 + 128) >> 8,
    ]
    assert list(img.data) == expected


def test_png_rgba_alpha_ignored(tmp_path):
    rgba = np.zeros((1, 1, 4), np.uint8)
    rgba[0, 0] = (10, 20, 30, 0)
    png = tmp_path / "a.png"
    Image.fromarray(rgba, mode="RGBA").save(png)
    img = load_gray(png)
    assert list(img.data) == [(77 * 10 + 150 * 20 + 29 * 30 + 128) >> 8]


def test_gray_image_validates_length():
    with pytest.raises(ValueError):
        GrayImage(width=2, height=2, data=bytes(3))


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    raster = rng.integers(0, 256, (5, 8), dtype=np.uint8)
    original = GrayImage.from_array(raster)
    path = tmp_path / "rt.pgm"
    save_pgm(original, path)
    again = load_gray(path)
    assert again == original
    assert np.array_equal(again.to_array(), raster)
