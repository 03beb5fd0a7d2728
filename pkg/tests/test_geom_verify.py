"""Tests for descriptor matching, RANSAC homography, verification scores,
and the rerank decision."""

from __future__ import annotations

import math

import numpy as np
import pytest
from oracles import (
    confidence_oracle,
    ratio_match_oracle,
    scale_score_oracle,
    spatial_score_oracle,
)
from PIL import Image
from synth import texture

from storylens.geom_verify import (
    Homography,
    MatchPair,
    RansacConfig,
    VerificationScores,
    compute_scores,
    confidence_and_decision,
    match_ratio,
    ransac_homography,
    report_to_json,
    symmetric_transfer_errors,
    verify_pair,
)
from storylens.images import GrayImage
from storylens.keypoints import Keypoint

FAST_RANSAC = RansacConfig(iterations=500, seed=3)


def _kp(x: float, y: float, size: float = 31.0) -> Keypoint:
    return Keypoint(x=x, y=y, size=size, angle=0.0, response=1.0, octave=0)


def _match(i: int, j: int) -> MatchPair:
    return MatchPair(query_index=i, candidate_index=j, distance=1.0, second_distance=10.0)


def _apply(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ph = np.hstack([pts, np.ones((len(pts), 1))]) @ h.T
    return ph[:, :2] / ph[:, 2:3]


class TestMatchRatio:
    def test_identical_binary_lists_self_match(self):
        rng = np.random.default_rng(0)
        descs = rng.integers(0, 256, (5, 32), dtype=np.uint8)
        got = match_ratio(descs, descs)
        assert len(got) == 5
        for i, m in enumerate(got):
            assert (m.query_index, m.candidate_index) == (i, i)
            assert m.distance == 0.0

    def test_equidistant_pair_rejected(self):
        q = np.zeros((1, 32), dtype=np.uint8)
        c = np.zeros((2, 32), dtype=np.uint8)
        c[0, 0] = 0b00000001  # 1 bit away
        c[1, 0] = 0b00000010  # also 1 bit away
        assert match_ratio(q, c) == []

    def test_single_candidate_kept_via_infinite_second(self):
        q = np.zeros((1, 32), dtype=np.uint8)
        c = np.full((1, 32), 255, dtype=np.uint8)
        got = match_ratio(q, c)
        assert len(got) == 1
        assert got[0].second_distance == math.inf
        assert got[0].distance == 256.0

    def test_binary_matches_oracle_exactly(self):
        rng = np.random.default_rng(42)
        q = rng.integers(0, 256, (100, 32), dtype=np.uint8)
        c = rng.integers(0, 256, (100, 32), dtype=np.uint8)
        got = match_ratio(q, c)
        expected = ratio_match_oracle(
            [bytes(row) for row in q], [bytes(row) for row in c], metric="hamming"
        )
        assert [(m.query_index, m.candidate_index) for m in got] == [
            (qi, ci) for qi, ci, _, _ in expected
        ]
        for m, (_, _, d, d2) in zip(got, expected):
            assert m.distance == float(d)
            assert m.second_distance == float(d2)

    def test_float_matches_oracle(self):
        rng = np.random.default_rng(17)
        q = rng.normal(size=(100, 128)).astype(np.float32)
        c = rng.normal(size=(100, 128)).astype(np.float32)
        got = match_ratio(q, c)
        expected = ratio_match_oracle(
            [row.astype(np.float64).tolist() for row in q],
            [row.astype(np.float64).tolist() for row in c],
            metric="euclidean",
        )
        assert [(m.query_index, m.candidate_index) for m in got] == [
            (qi, ci) for qi, ci, _, _ in expected
        ]
        for m, (_, _, d, d2) in zip(got, expected):
            assert m.distance == pytest.approx(d, abs=1e-9)
            assert m.second_distance == pytest.approx(d2, abs=1e-9)

    def test_mixed_kinds_rejected(self):
        binary = np.zeros((2, 32), dtype=np.uint8)
        floaty = np.zeros((2, 128), dtype=np.float32)
        with pytest.raises(ValueError, match="mixed"):
            match_ratio(binary, floaty)

    def test_empty_lists_rejected(self):
        descs = np.zeros((2, 32), dtype=np.uint8)
        with pytest.raises(ValueError):
            match_ratio(np.zeros((0, 32), np.uint8), descs)
        with pytest.raises(ValueError):
            match_ratio(descs, np.zeros((0, 32), np.uint8))

    def test_width_mismatch_rejected(self):
        with pytest.raises(ValueError):
            match_ratio(
                np.zeros((2, 32), np.uint8), np.zeros((2, 16), np.uint8)
            )

    def test_match_pair_invariant(self):
        with pytest.raises(ValueError):
            MatchPair(query_index=0, candidate_index=0, distance=5.0, second_distance=1.0)


class TestRansac:
    def test_identity_recovery(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 100, (20, 2))
        h, mask = ransac_homography(pts, pts, FAST_RANSAC)
        assert h is not None
        assert np.abs(h.as_array() - np.eye(3)).max() < 1e-6
        assert mask.all() and len(mask) == 20

    def test_planted_homography_with_outliers(self):
        rng = np.random.default_rng(1)
        true_h = np.array(
            [[0.9, 0.05, 10.0], [-0.03, 1.1, -5.0], [1e-4, -2e-4, 1.0]]
        )
        src = rng.uniform(0, 200, (50, 2))
        dst = _apply(true_h, src)
        outliers = rng.choice(50, 15, replace=False)
        dst[outliers] += rng.uniform(20, 60, (15, 2))
        h, mask = ransac_homography(src, dst, RansacConfig(iterations=500, seed=7))
        assert h is not None
        true_inliers = np.ones(50, dtype=bool)
        true_inliers[outliers] = False
        errors = symmetric_transfer_errors(
            h.as_array(), src[true_inliers], dst[true_inliers]
        )
        assert errors.max() < 1.0
        assert mask[true_inliers].sum() >= 0.9 * true_inliers.sum()

    def test_below_minimal_sample_returns_none(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        h, mask = ransac_homography(pts, pts, FAST_RANSAC)
        assert h is None
        assert mask.shape == (3,) and not mask.any()

    def test_seeded_determinism(self):
        rng = np.random.default_rng(2)
        src = rng.uniform(0, 100, (30, 2))
        dst = src + rng.normal(0, 0.5, (30, 2))
        a_h, a_mask = ransac_homography(src, dst, RansacConfig(iterations=300, seed=11))
        b_h, b_mask = ransac_homography(src, dst, RansacConfig(iterations=300, seed=11))
        assert a_h == b_h
        assert np.array_equal(a_mask, b_mask)

    def test_point_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ransac_homography(np.zeros((5, 2)), np.zeros((4, 2)), FAST_RANSAC)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RansacConfig(iterations=0)
        with pytest.raises(ValueError):
            RansacConfig(reproj_threshold=0.0)
        with pytest.raises(ValueError):
            RansacConfig(min_matches=3)

    def test_homography_type_invariants(self):
        with pytest.raises(ValueError):
            Homography(rows=((1.0, 0.0, 0.0), (2.0, 0.0, 0.0), (0.0, 0.0, 1.0)))
        with pytest.raises(ValueError):
            Homography.from_array(np.array([[1, 0, 0], [0, 1, 0], [0, 0, 0]]))


class TestComputeScores:
    def test_uniform_grid_spatial_is_one(self):
        # 16 inliers, one per 4x4 cell of a 64x64 query image
        kps = [_kp(8.0 + 16 * cx, 8.0 + 16 * cy) for cy in range(4) for cx in range(4)]
        matches = [_match(i, i) for i in range(16)]
        scores = compute_scores(
            matches, [True] * 16, None, kps, kps, 64, 64
        )
        assert scores.spatial == pytest.approx(1.0, abs=1e-12)
        assert scores.scale == pytest.approx(1.0, abs=1e-12)
        assert scores.inlier_ratio == 1.0
        assert scores.homography_score == 0.0

    def test_single_cell_spatial_closed_form(self):
        kps = [_kp(2.0 + 0.5 * i, 2.0) for i in range(16)]
        matches = [_match(i, i) for i in range(16)]
        scores = compute_scores(matches, [True] * 16, None, kps, kps, 64, 64)
        assert scores.spatial == pytest.approx(0.04906299563490881, abs=1e-12)

    def test_equal_size_ratios_scale_one(self):
        kps_q = [_kp(10.0 * i + 5, 30.0, size=14.0) for i in range(6)]
        kps_c = [_kp(10.0 * i + 5, 30.0, size=7.0) for i in range(6)]
        matches = [_match(i, i) for i in range(6)]
        scores = compute_scores(matches, [True] * 6, None, kps_q, kps_c, 64, 64)
        assert scores.scale == pytest.approx(1.0, abs=1e-12)

    def test_zero_inliers_zero_scores(self):
        kps = [_kp(5.0, 5.0)]
        scores = compute_scores([_match(0, 0)], [False], None, kps, kps, 64, 64)
        assert scores.inlier_ratio == 0.0
        assert scores.spatial == 0.0
        assert scores.scale == 0.0
        assert scores.homography_score == 0.0
        assert scores.n_inliers == 0
        assert scores.n_matches == 1

    def test_perfect_homography_scores_one(self):
        kps = [_kp(float(x), float(y)) for x, y in ((5, 5), (50, 5), (5, 50), (50, 50))]
        matches = [_match(i, i) for i in range(4)]
        identity = Homography.from_array(np.eye(3))
        scores = compute_scores(matches, [True] * 4, identity, kps, kps, 64, 64)
        assert scores.homography_score == pytest.approx(1.0, abs=1e-12)

    def test_inlier_ratio_integer_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(1, 40))
            kps = [_kp(float(rng.uniform(0, 63)), float(rng.uniform(0, 63))) for _ in range(n)]
            matches = [_match(i, i) for i in range(n)]
            mask = rng.uniform(size=n) < 0.5
            scores = compute_scores(matches, mask, None, kps, kps, 64, 64)
            assert scores.inlier_ratio * scores.n_matches == pytest.approx(
                scores.n_inliers, abs=1e-12
            )

    def test_randomized_formula_equivalence(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = int(rng.integers(1, 30))
            width, height = 96, 80
            xs = rng.uniform(0, width - 1e-9, n)
            ys = rng.uniform(0, height - 1e-9, n)
            sizes_q = rng.uniform(1.0, 20.0, n)
            sizes_c = rng.uniform(1.0, 20.0, n)
            kps_q = [_kp(float(x), float(y), float(s)) for x, y, s in zip(xs, ys, sizes_q)]
            kps_c = [_kp(float(x), float(y), float(s)) for x, y, s in zip(xs, ys, sizes_c)]
            matches = [_match(i, i) for i in range(n)]
            scores = compute_scores(
                matches, [True] * n, None, kps_q, kps_c, width, height
            )
            expected_spatial = spatial_score_oracle(
                list(zip(xs.tolist(), ys.tolist())), width, height
            )
            expected_scale = scale_score_oracle(
                (sizes_q / sizes_c).tolist()
            )
            assert scores.spatial == pytest.approx(expected_spatial, abs=1e-9)
            assert scores.scale == pytest.approx(expected_scale, abs=1e-9)
            assert 0.0 <= scores.spatial <= 1.0
            assert 0.0 <= scores.scale <= 1.0

    def test_mask_length_mismatch_rejected(self):
        kps = [_kp(1.0, 1.0)]
        with pytest.raises(ValueError):
            compute_scores([_match(0, 0)], [True, False], None, kps, kps, 64, 64)


def _scores(n_inliers: int, ratio: float = 0.0, hom: float = 0.0, spatial: float = 0.0) -> VerificationScores:
    return VerificationScores(
        inlier_ratio=ratio,
        spatial=spatial,
        scale=1.0,
        homography_score=hom,
        n_inliers=n_inliers,
        n_matches=max(n_inliers, 1),
    )


class TestConfidence:
    def test_maximal_components_sum_to_one(self):
        confidence, rerank = confidence_and_decision(
            _scores(0), _scores(40, ratio=1.0, hom=1.0, spatial=1.0)
        )
        assert confidence == pytest.approx(1.0, abs=1e-12)
        assert rerank is True

    def test_identical_zero_reports(self):
        confidence, rerank = confidence_and_decision(_scores(0), _scores(0))
        assert confidence == 0.0
        assert rerank is False

    def test_boundary_needs_strictly_more_than_eight_inliers(self):
        # confidence 0.45 > 0.4 but challenger has exactly 8 inliers
        weaker = _scores(8, ratio=1.0, hom=0.75)
        confidence, rerank = confidence_and_decision(_scores(8), weaker)
        assert confidence == pytest.approx(0.45, abs=1e-12)
        assert rerank is False
        stronger = _scores(9, ratio=1.0, hom=0.75)
        confidence, rerank = confidence_and_decision(_scores(9), stronger)
        assert confidence == pytest.approx(0.45, abs=1e-12)
        assert rerank is True

    def test_challenger_deficit_clamps_to_zero(self):
        confidence, _ = confidence_and_decision(_scores(30), _scores(10))
        assert confidence == 0.0

    def test_matches_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(200):
            n_a = int(rng.integers(0, 50))
            n_b = int(rng.integers(0, 50))
            r, h, s = rng.uniform(size=3)
            got_c, got_r = confidence_and_decision(
                _scores(n_a), _scores(n_b, ratio=r, hom=h, spatial=s)
            )
            want_c, want_r = confidence_oracle(n_a, n_b, r, h, s)
            assert got_c == pytest.approx(want_c, abs=1e-9)
            assert got_r == want_r
            assert 0.0 <= got_c <= 1.0

    def test_monotone_in_challenger_inliers(self):
        reranked = False
        for n_b in range(0, 60):
            _, rerank = confidence_and_decision(
                _scores(10), _scores(n_b, ratio=0.5, hom=0.5, spatial=0.5)
            )
            if reranked:
                assert rerank, f"rerank flipped back off at n_b={n_b}"
            reranked = reranked or rerank
        assert reranked


class TestVerifyPair:
    def test_image_against_itself(self):
        img = GrayImage.from_array(texture(7))
        report = verify_pair(img, img, FAST_RANSAC)
        assert report.scores.inlier_ratio >= 0.9
        assert report.homography is not None
        assert np.abs(report.homography.as_array() - np.eye(3)).max() < 1e-3
        assert report.rerank is True

    def test_rotated_copy_is_rerank_eligible(self):
        arr = texture(7)
        rotated = np.asarray(
            Image.fromarray(arr).rotate(15, resample=Image.BILINEAR, fillcolor=0),
            dtype=np.uint8,
        )
        report = verify_pair(
            GrayImage.from_array(arr), GrayImage.from_array(rotated), FAST_RANSAC
        )
        assert report.scores.n_inliers > 8
        assert report.rerank is True

    def test_unrelated_noise_not_reranked(self):
        rng = np.random.default_rng(99)
        noise = rng.integers(0, 256, (128, 128), dtype=np.uint8)
        report = verify_pair(
            GrayImage.from_array(texture(7)),
            GrayImage.from_array(noise),
            FAST_RANSAC,
        )
        assert report.scores.n_inliers <= 8 or report.scores.confidence <= 0.4
        assert report.rerank is False

    def test_flat_images_zero_report(self):
        flat = GrayImage.from_array(np.full((64, 64), 100, np.uint8))
        report = verify_pair(flat, flat, FAST_RANSAC)
        assert report.scores.n_matches == 0
        assert report.scores.confidence == 0.0
        assert report.homography is None
        assert report.rerank is False

    def test_deterministic_given_seed(self):
        img_a = GrayImage.from_array(texture(3))
        img_b = GrayImage.from_array(texture(4))
        first = verify_pair(img_a, img_b, FAST_RANSAC)
        second = verify_pair(img_a, img_b, FAST_RANSAC)
        assert first == second

    def test_report_json_shape(self):
        img = GrayImage.from_array(texture(7))
        payload = report_to_json(verify_pair(img, img, FAST_RANSAC))
        assert set(payload) == {"scores", "homography", "inlier_mask", "rerank"}
        assert len(payload["homography"]) == 3
        assert all(len(row) == 3 for row in payload["homography"])
        assert payload["scores"]["n_inliers"] == sum(payload["inlier_mask"])
        assert isinstance(payload["rerank"], bool)
