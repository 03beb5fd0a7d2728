"""Float keypoint pipeline: difference-of-Gaussians extrema over a scale
pyramid, quadratic localization, contrast and edge-ratio filters, dominant
gradient orientation, and 4x4x8 gradient-histogram descriptors.

Conventions: base sigma 1.6 on top of an assumed input blur of 0.5, no
initial upsampling, scales_per_octave+3 Gaussians per octave. Keypoint size
is the detected blob sigma in base-image pixels.
"""

from __future__ import annotations

import math

import numpy as np

from storylens.images import GrayImage
from storylens.keypoints.core import (
    MIN_DETECT_SIDE,
    Keypoint,
    gaussian_blur,
    wrap_angle,
)

__all__ = ["detect_describe_float"]

SIGMA0 = 1.6
ASSUMED_BLUR = 0.5
DEFAULT_OCTAVES = 4
DEFAULT_SCALES_PER_OCTAVE = 3
DEFAULT_CONTRAST_THRESHOLD = 0.04
DEFAULT_EDGE_THRESHOLD = 10.0
MAX_INTERP_STEPS = 5
IMG_BORDER = 5  # extrema must sit this far from octave-image edges
ORI_BINS = 36
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0  # radius = 3 * (1.5 * sigma)
ORI_PEAK_RATIO = 0.8
DESCR_WIDTH = 4  # 4x4 spatial cells
DESCR_ORI_BINS = 8
DESCR_SCALE_FACTOR = 3.0  # cell width = 3 * sigma
DESCR_CLIP = 0.2
MIN_OCTAVE_SIDE = 2 * IMG_BORDER + 6


def _build_pyramid(
    base: np.ndarray, octaves: int, s: int
) -> tuple[list[list[np.ndarray]], list[float]]:
    """Gaussian stack per octave plus the per-index octave-relative sigmas."""
    k = 2.0 ** (1.0 / s)
    sigmas = [SIGMA0 * k**i for i in range(s + 3)]
    deltas = [
        math.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2) for i in range(1, s + 3)
    ]
    first = gaussian_blur(base, math.sqrt(SIGMA0**2 - ASSUMED_BLUR**2))
    gauss: list[list[np.ndarray]] = []
    current = first
    for _ in range(octaves):
        if min(current.shape) < MIN_OCTAVE_SIDE:
            break
        level = [current]
        for delta in deltas:
            level.append(gaussian_blur(level[-1], delta))
        gauss.append(level)
        current = level[s][::2, ::2]
    return gauss, sigmas


def _dog_stack(gauss_octave: list[np.ndarray]) -> list[np.ndarray]:
    return [b - a for a, b in zip(gauss_octave, gauss_octave[1:])]


def _extrema_candidates(
    dog: list[np.ndarray], s: int, prefilter: float
) -> list[tuple[int, int, int]]:
    """(layer, y, x) of strict 26-neighbor extrema, raster order per layer."""
    found: list[tuple[int, int, int]] = []
    h, w = dog[0].shape
    for layer in range(1, s + 1):
        center = dog[layer][1:-1, 1:-1]
        passing = np.abs(center) > prefilter
        if not passing.any():
            continue
        is_max = passing.copy()
        is_min = passing.copy()
        for stack_layer in (dog[layer - 1], dog[layer], dog[layer + 1]):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if stack_layer is dog[layer] and dy == 0 and dx == 0:
                        continue
                    shifted = stack_layer[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
                    is_max &= center > shifted
                    is_min &= center < shifted
            if not (is_max.any() or is_min.any()):
                break
        ys, xs = np.nonzero(is_max | is_min)
        for y, x in zip(ys, xs):
            yy, xx = int(y) + 1, int(x) + 1
            if IMG_BORDER <= xx < w - IMG_BORDER and IMG_BORDER <= yy < h - IMG_BORDER:
                found.append((layer, yy, xx))
    return found


def _localize(
    dog: list[np.ndarray],
    layer: int,
    y: int,
    x: int,
    s: int,
    contrast_threshold: float,
    edge_threshold: float,
) -> tuple[int, int, int, np.ndarray, float] | None:
    """Quadratic fit in (x, y, scale); returns refined integer position,
    subpixel offset, and the interpolated response, or None when rejected."""
    h, w = dog[0].shape
    offset = np.zeros(3)
    grad = np.zeros(3)
    hessian = np.zeros((3, 3))
    for _ in range(MAX_INTERP_STEPS):
        prev_l, cur, next_l = dog[layer - 1], dog[layer], dog[layer + 1]
        v = cur[y, x]
        grad[0] = (cur[y, x + 1] - cur[y, x - 1]) * 0.5
        grad[1] = (cur[y + 1, x] - cur[y - 1, x]) * 0.5
        grad[2] = (next_l[y, x] - prev_l[y, x]) * 0.5
        dxx = cur[y, x + 1] + cur[y, x - 1] - 2.0 * v
        dyy = cur[y + 1, x] + cur[y - 1, x] - 2.0 * v
        dss = next_l[y, x] + prev_l[y, x] - 2.0 * v
        dxy = (
            cur[y + 1, x + 1] - cur[y + 1, x - 1]
            - cur[y - 1, x + 1] + cur[y - 1, x - 1]
        ) * 0.25
        dxs = (
            next_l[y, x + 1] - next_l[y, x - 1]
            - prev_l[y, x + 1] + prev_l[y, x - 1]
        ) * 0.25
        dys = (
            next_l[y + 1, x] - next_l[y - 1, x]
            - prev_l[y + 1, x] + prev_l[y - 1, x]
        ) * 0.25
        hessian[:] = ((dxx, dxy, dxs), (dxy, dyy, dys), (dxs, dys, dss))
        try:
            offset = -np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            return None
        if abs(offset[0]) < 0.5 and abs(offset[1]) < 0.5 and abs(offset[2]) < 0.5:
            break
        x += int(round(offset[0]))
        y += int(round(offset[1]))
        layer += int(round(offset[2]))
        if (
            layer < 1
            or layer > s
            or x < IMG_BORDER
            or x >= w - IMG_BORDER
            or y < IMG_BORDER
            or y >= h - IMG_BORDER
        ):
            return None
    else:
        return None
    response = dog[layer][y, x] + 0.5 * float(np.dot(grad, offset))
    if abs(response) * s < contrast_threshold:
        return None
    # edge-ratio filter on the 2x2 spatial Hessian
    dxx = hessian[0, 0]
    dyy = hessian[1, 1]
    dxy = hessian[0, 1]
    trace = dxx + dyy
    det = dxx * dyy - dxy * dxy
    r = edge_threshold
    if det <= 0 or trace * trace * r >= (r + 1.0) ** 2 * det:
        return None
    return layer, y, x, offset.copy(), float(response)


def _smooth_histogram(hist: np.ndarray) -> np.ndarray:
    # circular [1,4,6,4,1]/16, applied twice
    out = hist
    for _ in range(2):
        out = (
            np.roll(out, 2) + 4.0 * np.roll(out, 1) + 6.0 * out
            + 4.0 * np.roll(out, -1) + np.roll(out, -2)
        ) / 16.0
    return out


def _orientation_angles(
    gauss: np.ndarray, x: int, y: int, sigma_oct: float
) -> list[float]:
    """Dominant gradient directions: smoothed 36-bin histogram peaks at or
    above 0.8 of the maximum. Falls back to the argmax bin when no strict
    peak exists (perfectly symmetric neighborhoods)."""
    h, w = gauss.shape
    sigma_w = ORI_SIGMA_FACTOR * sigma_oct
    radius = max(1, int(round(ORI_RADIUS_FACTOR * sigma_w)))
    y0, y1 = max(y - radius, 1), min(y + radius, h - 2)
    x0, x1 = max(x - radius, 1), min(x + radius, w - 2)
    if y1 < y0 or x1 < x0:
        return [0.0]
    patch_dx = (gauss[y0 : y1 + 1, x0 + 1 : x1 + 2] - gauss[y0 : y1 + 1, x0 - 1 : x1]) * 0.5
    patch_dy = (gauss[y0 + 1 : y1 + 2, x0 : x1 + 1] - gauss[y0 - 1 : y1, x0 : x1 + 1]) * 0.5
    ys_rel = np.arange(y0, y1 + 1)[:, None] - y
    xs_rel = np.arange(x0, x1 + 1)[None, :] - x
    weights = np.exp(-(xs_rel**2 + ys_rel**2) / (2.0 * sigma_w * sigma_w))
    magnitude = np.hypot(patch_dx, patch_dy)
    theta = np.arctan2(patch_dy, patch_dx)
    bins = np.rint(theta * (ORI_BINS / (2.0 * math.pi))).astype(np.int64) % ORI_BINS
    hist = np.zeros(ORI_BINS)
    np.add.at(hist, bins.ravel(), (weights * magnitude).ravel())
    hist = _smooth_histogram(hist)
    peak = float(hist.max())
    if peak <= 0.0:
        return [0.0]
    angles: list[float] = []
    threshold = ORI_PEAK_RATIO * peak
    for b in range(ORI_BINS):
        left = hist[(b - 1) % ORI_BINS]
        right = hist[(b + 1) % ORI_BINS]
        if hist[b] > left and hist[b] > right and hist[b] >= threshold:
            denom = left - 2.0 * hist[b] + right
            shift = 0.0 if denom == 0.0 else 0.5 * (left - right) / denom
            angles.append(wrap_angle((b + shift) * (2.0 * math.pi / ORI_BINS)))
    if not angles:
        angles.append(
            wrap_angle(float(np.argmax(hist)) * (2.0 * math.pi / ORI_BINS))
        )
    return angles


def _descriptor(
    gauss: np.ndarray, x: int, y: int, sigma_oct: float, angle: float
) -> np.ndarray | None:
    """4x4 spatial cells x 8 orientation bins with trilinear voting."""
    h, w = gauss.shape
    d = DESCR_WIDTH
    nbins = DESCR_ORI_BINS
    cell = DESCR_SCALE_FACTOR * sigma_oct
    radius = int(round(cell * math.sqrt(2.0) * (d + 1) * 0.5))
    radius = min(radius, int(math.hypot(h, w)))
    y0, y1 = max(y - radius, 1), min(y + radius, h - 2)
    x0, x1 = max(x - radius, 1), min(x + radius, w - 2)
    if y1 < y0 or x1 < x0:
        return None
    patch_dx = (gauss[y0 : y1 + 1, x0 + 1 : x1 + 2] - gauss[y0 : y1 + 1, x0 - 1 : x1]) * 0.5
    patch_dy = (gauss[y0 + 1 : y1 + 2, x0 : x1 + 1] - gauss[y0 - 1 : y1, x0 : x1 + 1]) * 0.5
    ys_rel = (np.arange(y0, y1 + 1)[:, None] - y) * np.ones((1, x1 - x0 + 1))
    xs_rel = np.ones((y1 - y0 + 1, 1)) * (np.arange(x0, x1 + 1)[None, :] - x)
    cos_t, sin_t = math.cos(angle), math.sin(angle)
    x_rot = (xs_rel * cos_t + ys_rel * sin_t) / cell
    y_rot = (-xs_rel * sin_t + ys_rel * cos_t) / cell
    rbin = y_rot + d / 2.0 - 0.5
    cbin = x_rot + d / 2.0 - 0.5
    valid = (rbin > -1.0) & (rbin < d) & (cbin > -1.0) & (cbin < d)
    if not valid.any():
        return None
    rbin = rbin[valid]
    cbin = cbin[valid]
    gdx = patch_dx[valid]
    gdy = patch_dy[valid]
    xr = x_rot[valid]
    yr = y_rot[valid]
    magnitude = np.hypot(gdx, gdy)
    theta = np.arctan2(gdy, gdx)
    obin = np.mod(theta - angle, 2.0 * math.pi) * (nbins / (2.0 * math.pi))
    weight = np.exp(-(xr * xr + yr * yr) / (2.0 * (0.5 * d) ** 2)) * magnitude
    r0 = np.floor(rbin).astype(np.int64)
    c0 = np.floor(cbin).astype(np.int64)
    o0 = np.floor(obin).astype(np.int64)
    dr = rbin - r0
    dc = cbin - c0
    do = obin - o0
    o0 = np.mod(o0, nbins)
    hist = np.zeros((d + 2, d + 2, nbins))
    for r_step in (0, 1):
        wr = weight * (dr if r_step else 1.0 - dr)
        for c_step in (0, 1):
            wc = wr * (dc if c_step else 1.0 - dc)
            for o_step in (0, 1):
                wo = wc * (do if o_step else 1.0 - do)
                np.add.at(
                    hist,
                    (r0 + 1 + r_step, c0 + 1 + c_step, (o0 + o_step) % nbins),
                    wo,
                )
    vector = hist[1 : d + 1, 1 : d + 1, :].ravel()
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        return None
    vector = np.minimum(vector / norm, DESCR_CLIP)
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        return None
    return (vector / norm).astype(np.float32)


def detect_describe_float(
    image: GrayImage,
    octaves: int = DEFAULT_OCTAVES,
    scales_per_octave: int = DEFAULT_SCALES_PER_OCTAVE,
    contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD,
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
) -> list[tuple[Keypoint, np.ndarray]]:
    """Scale-space keypoints with 128-d unit-norm descriptors.

    Output is sorted by (x, y, size, angle) so repeated runs are identical.
    Undersized or featureless images return an empty list.
    """
    if octaves < 1:
        raise ValueError("octaves must be >= 1")
    if scales_per_octave < 1:
        raise ValueError("scales_per_octave must be >= 1")
    arr = image.to_array().astype(np.float64) / 255.0
    if min(arr.shape) < MIN_DETECT_SIDE:
        return []
    s = scales_per_octave
    gauss, sigmas = _build_pyramid(arr, octaves, s)
    prefilter = 0.5 * contrast_threshold / s
    k = 2.0 ** (1.0 / s)
    height, width = arr.shape
    results: list[tuple[Keypoint, np.ndarray]] = []
    seen: set[tuple[int, int, int, int, int]] = set()
    for octave_index, gauss_octave in enumerate(gauss):
        dog = _dog_stack(gauss_octave)
        scale_factor = float(2**octave_index)
        for layer, y, x in _extrema_candidates(dog, s, prefilter):
            localized = _localize(
                dog, layer, y, x, s, contrast_threshold, edge_threshold
            )
            if localized is None:
                continue
            final_layer, yi, xi, offset, response = localized
            sigma_oct = SIGMA0 * k ** (final_layer + float(offset[2]))
            x_base = (xi + float(offset[0])) * scale_factor
            y_base = (yi + float(offset[1])) * scale_factor
            if not (0.0 <= x_base < width and 0.0 <= y_base < height):
                continue
            layer_index = min(max(int(round(final_layer + offset[2])), 0), s + 2)
            gauss_img = gauss_octave[layer_index]
            for angle in _orientation_angles(gauss_img, xi, yi, sigma_oct):
                key = (
                    octave_index,
                    final_layer,
                    yi,
                    xi,
                    int(round(angle * 1e6)),
                )
                if key in seen:
                    continue
                seen.add(key)
                descriptor = _descriptor(gauss_img, xi, yi, sigma_oct, angle)
                if descriptor is None:
                    continue
                keypoint = Keypoint(
                    x=x_base,
                    y=y_base,
                    size=sigma_oct * scale_factor,
                    angle=angle,
                    response=abs(response),
                    octave=octave_index,
                )
                results.append((keypoint, descriptor))
    results.sort(key=lambda pair: (pair[0].x, pair[0].y, pair[0].size, pair[0].angle))
    return results
