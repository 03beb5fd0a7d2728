"""8-bit grayscale image loading: PGM (P5) parsed by hand, PNG via Pillow.

PNG color is reduced to luminance with integer BT.601 weights,
(77*R + 150*G + 29*B + 128) >> 8, so the result is bit-stable across
platforms and Pillow versions.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["GrayImage", "ImageFormatError", "load_gray", "save_pgm"]


class ImageFormatError(ValueError):
    """Unsupported or malformed image file."""


@dataclass(frozen=True)
class GrayImage:
    """Row-major 8-bit luminance raster."""

    width: int
    height: int
    data: bytes

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if len(self.data) != self.width * self.height:
            raise ValueError(
                f"data length {len(self.data)} != width*height "
                f"{self.width * self.height}"
            )

    def to_array(self) -> np.ndarray:
        """(height, width) uint8 view of the raster."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(
            self.height, self.width
        )

    @classmethod
    def from_array(cls, array: np.ndarray) -> "GrayImage":
        if array.ndim != 2:
            raise ValueError("expected a 2-d array")
        arr = np.ascontiguousarray(array, dtype=np.uint8)
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr.tobytes())


def _parse_pgm(raw: bytes, where: str) -> GrayImage:
    # header tokens are separated by whitespace; '#' starts a comment to EOL
    pos = 0
    n = len(raw)

    def fail(offset: int, message: str) -> ImageFormatError:
        return ImageFormatError(f"{where}: {message} at byte {offset}")

    def next_token() -> tuple[bytes, int]:
        nonlocal pos
        while pos < n:
            ch = raw[pos : pos + 1]
            if ch == b"#":
                while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        if pos >= n:
            raise fail(pos, "truncated header")
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace():
            pos += 1
        return raw[start:pos], start

    magic, off = next_token()
    if magic != b"P5":
        raise fail(off, f"not a P5 PGM (magic {magic[:8]!r})")
    fields = []
    for name in ("width", "height", "maxval"):
        token, off = next_token()
        if not token.isdigit():
            raise fail(off, f"invalid {name} token {token[:16]!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise fail(off, f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise fail(off, f"unsupported maxval {maxval} (only 8-bit handled)")
    if pos >= n:
        raise fail(pos, "truncated after header")
    pos += 1  # exactly one whitespace byte separates header and raster
    expected = width * height
    pixels = raw[pos : pos + expected]
    if len(pixels) != expected:
        raise fail(
            n, f"truncated raster: expected {expected} bytes, found {len(pixels)}"
        )
    return GrayImage(width=width, height=height, data=pixels)


_BT601_R = 77
_BT601_G = 150
_BT601_B = 29


def _png_to_gray(raw: bytes, where: str) -> GrayImage:
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise ImageFormatError(f"{where}: PNG decode failed: {exc}") from exc
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.uint8)
    elif img.mode in ("LA", "RGB", "RGBA", "P"):
        if img.mode != "RGB":
            img = img.convert("RGBA") if "A" in img.mode else img.convert("RGB")
        rgb = np.asarray(img)[..., :3].astype(np.uint32)
        luma = (
            _BT601_R * rgb[..., 0]
            + _BT601_G * rgb[..., 1]
            + _BT601_B * rgb[..., 2]
            + 128
        ) >> 8
        arr = luma.astype(np.uint8)
    else:
        raise ImageFormatError(f"{where}: unsupported PNG mode {img.mode!r}")
    return GrayImage.from_array(arr)


def load_gray(path: str | Path) -> GrayImage:
    """Load an 8-bit PGM (P5) or PNG file as a grayscale raster."""
    path = Path(path)
    raw = path.read_bytes()
    where = str(path)
    if raw[:2] == b"P5":
        return _parse_pgm(raw, where)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        return _png_to_gray(raw, where)
    raise ImageFormatError(f"{where}: unrecognized format at byte 0")


def save_pgm(image: GrayImage, path: str | Path) -> None:
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.data)
