"""Shared pieces for the keypoint pipelines: the Keypoint type, a separable
Gaussian blur, and central-difference gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

# detection is only attempted on images at least this large per side
MIN_DETECT_SIDE = 32


@dataclass(frozen=True)
class Keypoint:
    """One detected interest point.

    x, y are subpixel positions in image coordinates; size is a diameter-like
    scale in pixels; angle is radians in [0, 2*pi); response is the detector
    strength used for ranking; octave is the pyramid level (0 for the binary
    pipeline).
    """

    x: float
    y: float
    size: float
    angle: float
    response: float
    octave: int

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise ValueError("size must be > 0")
        if not 0.0 <= self.angle < TWO_PI:
            raise ValueError("angle must lie in [0, 2*pi)")


def wrap_angle(theta: float) -> float:
    wrapped = math.fmod(theta, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    if wrapped >= TWO_PI:  # fmod can land exactly on 2*pi after the add
        wrapped = 0.0
    return wrapped


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-d Gaussian taps, unit sum. Kernel size is ceil(6*sigma) forced odd."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    size = int(math.ceil(6.0 * sigma))
    if size % 2 == 0:
        size += 1
    radius = size // 2
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with mirrored (reflect) borders, float64 math.

    Accumulation walks the kernel taps in a fixed order so results are
    bit-identical across runs.
    """
    arr = np.asarray(image, dtype=np.float64)
    if sigma <= 0:
        return arr.copy()
    kernel = gaussian_kernel(sigma)
    radius = len(kernel) // 2
    if radius >= arr.shape[0] or radius >= arr.shape[1]:
        # reflect padding needs radius < side; fall back to symmetric
        pad_mode = "symmetric"
    else:
        pad_mode = "reflect"
    padded = np.pad(arr, ((0, 0), (radius, radius)), mode=pad_mode)
    horiz = np.zeros_like(arr)
    width = arr.shape[1]
    for i, tap in enumerate(kernel):
        horiz += tap * padded[:, i : i + width]
    padded = np.pad(horiz, ((radius, radius), (0, 0)), mode=pad_mode)
    out = np.zeros_like(arr)
    height = arr.shape[0]
    for i, tap in enumerate(kernel):
        out += tap * padded[i : i + height, :]
    return out


def gradients(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference dx, dy with zero borders."""
    arr = np.asarray(image, dtype=np.float64)
    dx = np.zeros_like(arr)
    dy = np.zeros_like(arr)
    dx[:, 1:-1] = (arr[:, 2:] - arr[:, :-2]) * 0.5
    dy[1:-1, :] = (arr[2:, :] - arr[:-2, :]) * 0.5
    return dx, dy
