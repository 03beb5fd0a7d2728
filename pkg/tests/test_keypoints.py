"""Keypoint pipeline tests: corner geometry, rotation robustness, scale
behavior, determinism, and descriptor invariants."""

from __future__ import annotations

import math

import numpy as np
import pytest
from synth import gaussian_blob, texture, white_square

from storylens.images import GrayImage
from storylens.keypoints import (
    Keypoint,
    detect_describe_binary,
    detect_describe_float,
    fast_corners,
    gaussian_blur,
)
from storylens.keypoints.core import gaussian_kernel, wrap_angle
from storylens.keypoints.pattern import (
    PATTERN,
    PATTERN_RADIUS,
    generate_pattern,
)

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(1)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int(_POPCOUNT[np.bitwise_xor(a, b)].sum())


class TestCore:
    def test_kernel_is_odd_and_normalized(self):
        for sigma in (0.5, 1.0, 1.6, 2.0, 4.0):
            kernel = gaussian_kernel(sigma)
            assert len(kernel) % 2 == 1
            assert len(kernel) >= math.ceil(6 * sigma)
            assert kernel.sum() == pytest.approx(1.0, abs=1e-12)

    def test_blur_preserves_constant(self):
        arr = np.full((40, 40), 55.0)
        out = gaussian_blur(arr, 2.0)
        assert np.allclose(out, 55.0, atol=1e-9)

    def test_blur_is_deterministic(self):
        arr = texture(3).astype(np.float64)
        a = gaussian_blur(arr, 1.7)
        b = gaussian_blur(arr, 1.7)
        assert np.array_equal(a, b)

    def test_wrap_angle_range(self):
        for theta in (-7.0, -math.pi, 0.0, math.pi, 6.2831853, 100.0):
            wrapped = wrap_angle(theta)
            assert 0.0 <= wrapped < 2.0 * math.pi

    def test_keypoint_validation(self):
        with pytest.raises(ValueError):
            Keypoint(x=0, y=0, size=0.0, angle=0.0, response=0.0, octave=0)
        with pytest.raises(ValueError):
            Keypoint(x=0, y=0, size=1.0, angle=7.0, response=0.0, octave=0)


class TestPattern:
    def test_regeneration_matches_frozen_table(self):
        assert tuple(tuple(p) for p in generate_pattern()) == PATTERN

    def test_table_shape_and_disc_bound(self):
        assert len(PATTERN) == 256
        assert len(set(PATTERN)) == 256
        rr = PATTERN_RADIUS * PATTERN_RADIUS
        for ax, ay, bx, by in PATTERN:
            assert ax * ax + ay * ay <= rr
            assert bx * bx + by * by <= rr
            assert (ax, ay) != (bx, by)


class TestBinaryPipeline:
    def test_constant_image_yields_nothing(self):
        img = GrayImage.from_array(np.full((64, 64), 128, np.uint8))
        assert detect_describe_binary(img) == []

    def test_undersized_image_yields_nothing(self):
        img = GrayImage.from_array(np.zeros((31, 31), np.uint8))
        assert detect_describe_binary(img) == []

    def test_white_square_corners_found(self):
        img = GrayImage.from_array(white_square())
        found = detect_describe_binary(img)
        assert len(found) >= 4
        for cx, cy in ((16, 16), (16, 47), (47, 16), (47, 47)):
            nearest = min(
                math.hypot(kp.x - cx, kp.y - cy) for kp, _ in found
            )
            assert nearest <= 3.0

    def test_rotation_90_descriptor_stability(self):
        arr = texture(7)
        width = arr.shape[1]
        plain = detect_describe_binary(GrayImage.from_array(arr), max_features=300)
        rotated = detect_describe_binary(
            GrayImage.from_array(np.rot90(arr, 1).copy()), max_features=300
        )
        by_pos = {(round(kp.x), round(kp.y)): d for kp, d in rotated}
        distances = []
        for kp, descriptor in plain:
            # CCW 90 degrees maps (x, y) -> (y, width-1-x)
            target = (round(kp.y), round(width - 1 - kp.x))
            candidates = [
                by_pos[(target[0] + dx, target[1] + dy)]
                for dx in (-1, 0, 1)
                for dy in (-1, 0, 1)
                if (target[0] + dx, target[1] + dy) in by_pos
            ]
            if candidates:
                distances.append(
                    min(hamming(descriptor, other) for other in candidates)
                )
        assert len(distances) >= 20
        assert float(np.median(distances)) <= 64.0

    def test_determinism(self):
        img = GrayImage.from_array(texture(12))
        a = detect_describe_binary(img)
        b = detect_describe_binary(img)
        assert len(a) == len(b)
        for (kp1, d1), (kp2, d2) in zip(a, b):
            assert kp1 == kp2
            assert np.array_equal(d1, d2)

    def test_monotone_feature_budget(self):
        img = GrayImage.from_array(texture(5))
        small = detect_describe_binary(img, max_features=30)
        large = detect_describe_binary(img, max_features=120)
        assert len(small) == 30
        for (kp_s, d_s), (kp_l, d_l) in zip(small, large):
            assert kp_s == kp_l
            assert np.array_equal(d_s, d_l)

    def test_brightness_offset_changes_few_corners(self):
        arr = texture(9)  # intensities stay in 10..230, +20 cannot saturate far
        shifted = np.clip(arr.astype(np.int32) + 20, 0, 255).astype(np.uint8)
        base = {(x, y) for x, y, _ in fast_corners(GrayImage.from_array(arr))}
        moved = {(x, y) for x, y, _ in fast_corners(GrayImage.from_array(shifted))}
        assert base
        changed = len(base ^ moved) / len(base | moved)
        assert changed <= 0.10

    def test_descriptor_and_keypoint_invariants(self):
        img = GrayImage.from_array(texture(21))
        found = detect_describe_binary(img)
        assert found
        for kp, descriptor in found:
            assert 0 <= kp.x < img.width
            assert 0 <= kp.y < img.height
            assert kp.size > 0
            assert 0.0 <= kp.angle < 2.0 * math.pi
            assert kp.octave == 0
            assert descriptor.dtype == np.uint8
            assert descriptor.shape == (32,)

    def test_ranked_by_response(self):
        img = GrayImage.from_array(texture(4))
        found = detect_describe_binary(img)
        responses = [kp.response for kp, _ in found]
        assert responses == sorted(responses, reverse=True)

    def test_bad_budget_rejected(self):
        img = GrayImage.from_array(texture(4))
        with pytest.raises(ValueError):
            detect_describe_binary(img, max_features=0)


class TestFloatPipeline:
    def test_constant_image_yields_nothing(self):
        img = GrayImage.from_array(np.full((64, 64), 77, np.uint8))
        assert detect_describe_float(img) == []

    def test_undersized_image_yields_nothing(self):
        img = GrayImage.from_array(np.zeros((20, 200), np.uint8))
        assert detect_describe_float(img) == []

    def test_gaussian_blob_center_and_scale(self):
        img = GrayImage.from_array(gaussian_blob(128, sigma=4.0))
        found = detect_describe_float(img)
        center = 128 // 2
        hits = [
            kp
            for kp, _ in found
            if math.hypot(kp.x - center, kp.y - center) <= 2.0
        ]
        assert hits
        assert any(2.0 <= kp.size <= 8.0 for kp in hits)

    def test_upsampled_copy_doubles_size(self):
        arr = texture(7)
        base = detect_describe_float(GrayImage.from_array(arr))
        doubled = np.kron(arr, np.ones((2, 2), dtype=np.uint8))
        upscaled = detect_describe_float(GrayImage.from_array(doubled))
        positions = [(kp.x, kp.y, kp.size) for kp, _ in upscaled]
        ratios = []
        for kp, _ in base:
            ex, ey = kp.x * 2 + 0.5, kp.y * 2 + 0.5
            near = [
                s
                for x, y, s in positions
                if abs(x - ex) <= 3.0 and abs(y - ey) <= 3.0
            ]
            if near:
                best = min(near, key=lambda s: abs(s - 2.0 * kp.size))
                ratios.append(best / kp.size)
        assert len(ratios) >= 10
        assert 1.6 <= float(np.median(ratios)) <= 2.4

    def test_determinism(self):
        img = GrayImage.from_array(texture(15))
        a = detect_describe_float(img)
        b = detect_describe_float(img)
        assert len(a) == len(b)
        for (kp1, d1), (kp2, d2) in zip(a, b):
            assert kp1 == kp2
            assert np.array_equal(d1, d2)

    def test_descriptor_and_keypoint_invariants(self):
        img = GrayImage.from_array(texture(30))
        found = detect_describe_float(img)
        assert found
        for kp, descriptor in found:
            assert 0 <= kp.x < img.width
            assert 0 <= kp.y < img.height
            assert kp.size > 0
            assert 0.0 <= kp.angle < 2.0 * math.pi
            assert descriptor.dtype == np.float32
            assert descriptor.shape == (128,)
            assert float(descriptor.min()) >= 0.0
            assert np.linalg.norm(descriptor) == pytest.approx(1.0, abs=1e-5)

    def test_single_octave_runs(self):
        img = GrayImage.from_array(texture(7, size=64))
        found = detect_describe_float(img, octaves=1)
        assert all(kp.octave == 0 for kp, _ in found)

    def test_bad_parameters_rejected(self):
        img = GrayImage.from_array(texture(7, size=64))
        with pytest.raises(ValueError):
            detect_describe_float(img, octaves=0)
        with pytest.raises(ValueError):
            detect_describe_float(img, scales_per_octave=0)
