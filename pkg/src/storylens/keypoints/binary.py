"""Binary keypoint pipeline: segment-test corners on a 16-pixel circle,
corner ranking by a Harris response, intensity-centroid orientation, and a
256-bit descriptor from rotated point-pair intensity comparisons.
"""

from __future__ import annotations

import math

import numpy as np

from storylens.images import GrayImage
from storylens.keypoints.core import (
    MIN_DETECT_SIDE,
    Keypoint,
    gaussian_blur,
    gradients,
    wrap_angle,
)
from storylens.keypoints.pattern import PATTERN

__all__ = ["fast_corners", "detect_describe_binary"]

# Bresenham circle of radius 3, clockwise from twelve o'clock: (dx, dy)
CIRCLE = (
    (0, -3), (1, -3), (2, -2), (3, -1),
    (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1),
    (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)
SEGMENT_LENGTH = 9  # contiguous circle pixels required

DESCRIPTOR_PATCH = 31  # descriptor/orientation patch diameter
BORDER = 16  # keeps the radius-15 patch plus rounding inside the image
ORIENTATION_RADIUS = 15
ROTATION_BINS = 30  # 12 degrees per bin
HARRIS_K = 0.04
HARRIS_WINDOW_RADIUS = 3
DESCRIPTOR_BLUR_SIGMA = 2.0


def _contiguous_run(mask: np.ndarray) -> np.ndarray:
    """True where >= SEGMENT_LENGTH consecutive circle positions are set.

    mask is (16, h, w); wraparound runs count.
    """
    out = np.zeros(mask.shape[1:], dtype=bool)
    for start in range(16):
        run = mask[start].copy()
        for step in range(1, SEGMENT_LENGTH):
            run &= mask[(start + step) % 16]
        out |= run
    return out


def fast_corners(
    image: GrayImage, threshold: int = 20
) -> list[tuple[int, int, float]]:
    """Segment-test corners with 3x3 non-max suppression on the corner score.

    Returns (x, y, score) in raster order. Images smaller than
    MIN_DETECT_SIDE per side yield no corners.
    """
    arr = image.to_array().astype(np.int32)
    h, w = arr.shape
    if min(h, w) < MIN_DETECT_SIDE:
        return []
    center = arr[3 : h - 3, 3 : w - 3]
    ring = np.empty((16,) + center.shape, dtype=np.int32)
    for idx, (dx, dy) in enumerate(CIRCLE):
        ring[idx] = arr[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx]
    bright = ring > center + threshold
    dark = ring < center - threshold
    corner = _contiguous_run(bright) | _contiguous_run(dark)
    if not corner.any():
        return []
    # score: total intensity margin beyond the threshold, brighter or darker arm
    bright_sum = np.where(bright, ring - center - threshold, 0).sum(axis=0)
    dark_sum = np.where(dark, center - ring - threshold, 0).sum(axis=0)
    score = np.where(corner, np.maximum(bright_sum, dark_sum), 0)
    padded = np.pad(score, 1)
    keep = score > 0
    sh, sw = score.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            keep &= score >= padded[1 + dy : 1 + dy + sh, 1 + dx : 1 + dx + sw]
    ys, xs = np.nonzero(keep)
    return [
        (int(x) + 3, int(y) + 3, float(score[y, x])) for y, x in zip(ys, xs)
    ]


def _box_sum(values: np.ndarray, radius: int) -> np.ndarray:
    """Windowed sum with windows clipped at the borders (integral image)."""
    h, w = values.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.float64)
    ii[1:, 1:] = np.cumsum(np.cumsum(values, axis=0), axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.maximum(ys - radius, 0)
    y1 = np.minimum(ys + radius, h - 1) + 1
    x0 = np.maximum(xs - radius, 0)
    x1 = np.minimum(xs + radius, w - 1) + 1
    return (
        ii[np.ix_(y1, x1)]
        - ii[np.ix_(y0, x1)]
        - ii[np.ix_(y1, x0)]
        + ii[np.ix_(y0, x0)]
    )


def _harris_response(arr: np.ndarray) -> np.ndarray:
    smooth = gaussian_blur(arr, 1.0)
    dx, dy = gradients(smooth)
    ixx = _box_sum(dx * dx, HARRIS_WINDOW_RADIUS)
    iyy = _box_sum(dy * dy, HARRIS_WINDOW_RADIUS)
    ixy = _box_sum(dx * dy, HARRIS_WINDOW_RADIUS)
    trace = ixx + iyy
    return ixx * iyy - ixy * ixy - HARRIS_K * trace * trace


def _orientation_tables() -> tuple[np.ndarray, np.ndarray]:
    span = np.arange(-ORIENTATION_RADIUS, ORIENTATION_RADIUS + 1)
    dx, dy = np.meshgrid(span, span)
    disc = (dx * dx + dy * dy) <= ORIENTATION_RADIUS * ORIENTATION_RADIUS
    return (dx * disc).astype(np.float64), (dy * disc).astype(np.float64)


_CENTROID_DX, _CENTROID_DY = _orientation_tables()


def _centroid_angle(arr: np.ndarray, x: int, y: int) -> float:
    r = ORIENTATION_RADIUS
    patch = arr[y - r : y + r + 1, x - r : x + r + 1]
    m10 = float(np.sum(patch * _CENTROID_DX))
    m01 = float(np.sum(patch * _CENTROID_DY))
    if m10 == 0.0 and m01 == 0.0:
        return 0.0
    return wrap_angle(math.atan2(m01, m10))


def _rotated_patterns() -> list[np.ndarray]:
    base = np.asarray(PATTERN, dtype=np.float64)  # (256, 4) ax ay bx by
    tables = []
    for b in range(ROTATION_BINS):
        theta = b * (2.0 * math.pi / ROTATION_BINS)
        c, s = math.cos(theta), math.sin(theta)
        rot = np.empty_like(base)
        rot[:, 0] = c * base[:, 0] - s * base[:, 1]
        rot[:, 1] = s * base[:, 0] + c * base[:, 1]
        rot[:, 2] = c * base[:, 2] - s * base[:, 3]
        rot[:, 3] = s * base[:, 2] + c * base[:, 3]
        tables.append(np.rint(rot).astype(np.int64))
    return tables


_ROTATED = _rotated_patterns()
_BIN_WIDTH = 2.0 * math.pi / ROTATION_BINS


def _descriptor(blurred: np.ndarray, x: int, y: int, angle: float) -> np.ndarray:
    pattern = _ROTATED[int(round(angle / _BIN_WIDTH)) % ROTATION_BINS]
    a_vals = blurred[y + pattern[:, 1], x + pattern[:, 0]]
    b_vals = blurred[y + pattern[:, 3], x + pattern[:, 2]]
    return np.packbits(a_vals < b_vals, bitorder="little")


def detect_describe_binary(
    image: GrayImage, max_features: int = 500, fast_threshold: int = 20
) -> list[tuple[Keypoint, np.ndarray]]:
    """Corner keypoints ranked by Harris response with 32-byte descriptors.

    Raising max_features only extends the ranked list; the prefix is stable.
    Flat or undersized images return an empty list.
    """
    if max_features < 1:
        raise ValueError("max_features must be >= 1")
    corners = fast_corners(image, fast_threshold)
    arr = image.to_array().astype(np.float64)
    h, w = arr.shape
    inside = [
        (x, y, s)
        for x, y, s in corners
        if BORDER <= x < w - BORDER and BORDER <= y < h - BORDER
    ]
    if not inside:
        return []
    harris = _harris_response(arr)
    ranked = sorted(
        ((float(harris[y, x]), x, y) for x, y, _ in inside),
        key=lambda t: (-t[0], t[2], t[1]),
    )[:max_features]
    blurred = gaussian_blur(arr, DESCRIPTOR_BLUR_SIGMA)
    out: list[tuple[Keypoint, np.ndarray]] = []
    for response, x, y in ranked:
        angle = _centroid_angle(arr, x, y)
        descriptor = _descriptor(blurred, x, y, angle)
        keypoint = Keypoint(
            x=float(x),
            y=float(y),
            size=float(DESCRIPTOR_PATCH),
            angle=angle,
            response=response,
            octave=0,
        )
        out.append((keypoint, descriptor))
    return out
