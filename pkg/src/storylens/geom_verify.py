"""Geometric verification between a query and a candidate image: nearest
neighbor descriptor matching with a ratio filter, seeded RANSAC homography
estimation, four sub-scores, a composite confidence, and the rerank decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from storylens.images import GrayImage
from storylens.keypoints import (
    Keypoint,
    detect_describe_binary,
    detect_describe_float,
)

__all__ = [
    "MatchPair",
    "Homography",
    "RansacConfig",
    "VerificationScores",
    "VerificationReport",
    "match_ratio",
    "ransac_homography",
    "compute_scores",
    "confidence_and_decision",
    "symmetric_transfer_errors",
    "verify_pair",
    "report_to_json",
]

DEFAULT_RATIO = 0.7
GRID_SIDE = 4
RERANK_CONFIDENCE = 0.4
RERANK_MIN_INLIERS = 8

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(
    axis=1
).astype(np.int64)


@dataclass(frozen=True)
class MatchPair:
    query_index: int
    candidate_index: int
    distance: float
    second_distance: float

    def __post_init__(self) -> None:
        if self.distance > self.second_distance:
            raise ValueError("distance must be <= second_distance")


@dataclass(frozen=True)
class Homography:
    """Row-major 3x3 projective transform with h33 normalized to 1."""

    rows: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        arr = np.asarray(self.rows, dtype=np.float64)
        if arr.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if not np.isfinite(arr).all():
            raise ValueError("homography entries must be finite")
        det2 = arr[0, 0] * arr[1, 1] - arr[0, 1] * arr[1, 0]
        if det2 == 0.0:
            raise ValueError("upper-left 2x2 block is singular")

    @classmethod
    def from_array(cls, matrix: np.ndarray) -> "Homography":
        arr = np.asarray(matrix, dtype=np.float64)
        h33 = arr[2, 2]
        if abs(h33) < 1e-12:
            raise ValueError("h33 too small to normalize")
        arr = arr / h33
        return cls(rows=tuple(tuple(float(v) for v in row) for row in arr))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=np.float64)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 2000
    reproj_threshold: float = 3.0
    seed: int = 0
    min_matches: int = 4

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.reproj_threshold <= 0:
            raise ValueError("reproj_threshold must be > 0")
        if self.min_matches < 4:
            raise ValueError("min_matches must be >= 4 (minimal sample)")


@dataclass(frozen=True)
class VerificationScores:
    inlier_ratio: float
    spatial: float
    scale: float
    homography_score: float
    n_inliers: int
    n_matches: int
    confidence: float | None = None


ZERO_SCORES = VerificationScores(
    inlier_ratio=0.0,
    spatial=0.0,
    scale=0.0,
    homography_score=0.0,
    n_inliers=0,
    n_matches=0,
    confidence=0.0,
)


@dataclass(frozen=True)
class VerificationReport:
    scores: VerificationScores
    homography: Homography | None
    inlier_mask: tuple[bool, ...]
    rerank: bool


def _descriptor_matrix(descriptors) -> tuple[np.ndarray, str]:
    arr = np.asarray(descriptors)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("descriptor list must be non-empty and rectangular")
    if arr.dtype == np.uint8:
        return arr, "binary"
    if arr.dtype in (np.float32, np.float64):
        return arr.astype(np.float64), "float"
    raise ValueError(f"unsupported descriptor dtype {arr.dtype}")


def match_ratio(
    desc_q, desc_c, tau: float = DEFAULT_RATIO
) -> list[MatchPair]:
    """Nearest-neighbor matches kept iff distance < tau * second_distance.

    Binary descriptors (uint8) compare by Hamming bits, float descriptors by
    Euclidean distance; mixing kinds is an error. A single-candidate list
    uses second_distance = +inf, which keeps the match.
    """
    if not 0.0 < tau:
        raise ValueError("tau must be > 0")
    q, kind_q = _descriptor_matrix(desc_q)
    c, kind_c = _descriptor_matrix(desc_c)
    if kind_q != kind_c:
        raise ValueError(
            f"mixed descriptor kinds: query {kind_q}, candidate {kind_c}"
        )
    if q.shape[1] != c.shape[1]:
        raise ValueError("descriptor widths differ")
    matches: list[MatchPair] = []
    n_candidates = c.shape[0]
    for i in range(q.shape[0]):
        if kind_q == "binary":
            distances = _POPCOUNT[np.bitwise_xor(c, q[i])].sum(axis=1).astype(
                np.float64
            )
        else:
            diff = c - q[i]
            distances = np.sqrt((diff * diff).sum(axis=1))
        order = np.argsort(distances, kind="stable")
        best = int(order[0])
        d1 = float(distances[best])
        d2 = float(distances[int(order[1])]) if n_candidates > 1 else math.inf
        if d1 < tau * d2:
            matches.append(
                MatchPair(
                    query_index=i,
                    candidate_index=best,
                    distance=d1,
                    second_distance=d2,
                )
            )
    return matches


def _normalize_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = points.mean(axis=0)
    shifted = points - centroid
    mean_dist = np.sqrt((shifted * shifted).sum(axis=1)).mean()
    scale = math.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    transform = np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return shifted * scale, transform


def _dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Least-squares homography from >= 4 correspondences, or None."""
    src_n, t_src = _normalize_points(src)
    dst_n, t_dst = _normalize_points(dst)
    n = src.shape[0]
    a = np.zeros((2 * n, 9))
    x, y = src_n[:, 0], src_n[:, 1]
    u, v = dst_n[:, 0], dst_n[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    try:
        _, sv, vh = np.linalg.svd(a)
    except np.linalg.LinAlgError:
        return None
    if sv[0] == 0.0 or (len(sv) >= 8 and sv[7] < 1e-8 * sv[0]):
        return None
    h = vh[-1].reshape(3, 3)
    try:
        full = np.linalg.inv(t_dst) @ h @ t_src
    except np.linalg.LinAlgError:
        return None
    if abs(full[2, 2]) < 1e-12:
        return None
    return full / full[2, 2]


def symmetric_transfer_errors(
    matrix: np.ndarray, src: np.ndarray, dst: np.ndarray
) -> np.ndarray:
    """Per-point sqrt(forward^2 + backward^2) reprojection error."""
    n = src.shape[0]
    errors = np.full(n, np.inf)
    try:
        inverse = np.linalg.inv(matrix)
    except np.linalg.LinAlgError:
        return errors
    src_h = np.hstack([src, np.ones((n, 1))])
    dst_h = np.hstack([dst, np.ones((n, 1))])
    fwd = src_h @ matrix.T
    bwd = dst_h @ inverse.T
    ok = (np.abs(fwd[:, 2]) > 1e-12) & (np.abs(bwd[:, 2]) > 1e-12)
    fwd_err = np.full(n, np.inf)
    bwd_err = np.full(n, np.inf)
    fwd_pts = fwd[ok, :2] / fwd[ok, 2:3]
    bwd_pts = bwd[ok, :2] / bwd[ok, 2:3]
    fwd_err[ok] = ((fwd_pts - dst[ok]) ** 2).sum(axis=1)
    bwd_err[ok] = ((bwd_pts - src[ok]) ** 2).sum(axis=1)
    errors[ok] = np.sqrt(fwd_err[ok] + bwd_err[ok])
    return errors


def _sample_trials(
    rng: np.random.Generator, n: int, iterations: int
) -> np.ndarray:
    # all samples drawn up front so determinism never depends on control flow
    samples = np.empty((iterations, 4), dtype=np.int64)
    for t in range(iterations):
        samples[t] = rng.choice(n, size=4, replace=False)
    return samples


def ransac_homography(
    src_points, dst_points, config: RansacConfig = RansacConfig()
) -> tuple[Homography | None, np.ndarray]:
    """Seeded RANSAC over 4-point minimal DLT samples.

    Returns the refit homography and a boolean inlier mask, or (None, zeros)
    when the input is too small or no trial reaches min_matches inliers.
    """
    src = np.asarray(src_points, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst_points, dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError("src and dst point counts differ")
    n = src.shape[0]
    empty = np.zeros(n, dtype=bool)
    if n < config.min_matches:
        return None, empty
    rng = np.random.default_rng(config.seed)
    samples = _sample_trials(rng, n, config.iterations)
    threshold = config.reproj_threshold
    best_count = 0
    best_err_sum = math.inf
    best_matrix: np.ndarray | None = None
    best_mask = empty
    for trial in range(config.iterations):
        idx = samples[trial]
        matrix = _dlt(src[idx], dst[idx])
        if matrix is None:
            continue
        errors = symmetric_transfer_errors(matrix, src, dst)
        mask = errors < threshold
        count = int(mask.sum())
        if count < config.min_matches:
            continue
        err_sum = float(errors[mask].sum())
        if count > best_count or (count == best_count and err_sum < best_err_sum):
            best_count = count
            best_err_sum = err_sum
            best_matrix = matrix
            best_mask = mask
    if best_matrix is None:
        return None, empty
    refit = _dlt(src[best_mask], dst[best_mask])
    if refit is not None:
        refit_errors = symmetric_transfer_errors(refit, src, dst)
        refit_mask = refit_errors < threshold
        if int(refit_mask.sum()) >= config.min_matches:
            best_matrix = refit
            best_mask = refit_mask
    try:
        homography = Homography.from_array(best_matrix)
    except ValueError:
        return None, empty
    return homography, best_mask


def _population_std(values: np.ndarray) -> float:
    return float(np.sqrt(((values - values.mean()) ** 2).mean()))


def compute_scores(
    matches: list[MatchPair],
    inlier_mask,
    homography: Homography | None,
    query_keypoints: list[Keypoint],
    candidate_keypoints: list[Keypoint],
    image_width: int,
    image_height: int,
    reproj_threshold: float = 3.0,
) -> VerificationScores:
    """Sub-scores for one verified pair; confidence is left for the pairwise
    decision step. All terms are zero when there are no inliers."""
    mask = np.asarray(inlier_mask, dtype=bool)
    if len(mask) != len(matches):
        raise ValueError("mask length must equal match count")
    n_matches = len(matches)
    n_inliers = int(mask.sum())
    if n_inliers == 0:
        return replace(ZERO_SCORES, n_matches=n_matches, confidence=None)
    inliers = [m for m, keep in zip(matches, mask) if keep]
    inlier_ratio = n_inliers / max(n_matches, 1)

    # spatial dispersion over a 4x4 grid of the query image
    cells = np.zeros(GRID_SIDE * GRID_SIDE)
    cell_w = image_width / GRID_SIDE
    cell_h = image_height / GRID_SIDE
    for m in inliers:
        kp = query_keypoints[m.query_index]
        cx = min(int(kp.x / cell_w), GRID_SIDE - 1)
        cy = min(int(kp.y / cell_h), GRID_SIDE - 1)
        cells[cy * GRID_SIDE + cx] += 1.0
    occupied = int((cells > 0).sum())
    sigma_grid = _population_std(cells)
    spatial = (occupied / 16.0) * math.exp(-sigma_grid / n_inliers)

    # consistency of keypoint size ratios, invariant to a global zoom
    ratios = np.array(
        [
            query_keypoints[m.query_index].size
            / candidate_keypoints[m.candidate_index].size
            for m in inliers
        ]
    )
    normalized = ratios / ratios.mean()
    scale = 1.0 / (1.0 + _population_std(normalized))

    if homography is None:
        homography_score = 0.0
    else:
        src = np.array(
            [
                (query_keypoints[m.query_index].x, query_keypoints[m.query_index].y)
                for m in inliers
            ]
        )
        dst = np.array(
            [
                (
                    candidate_keypoints[m.candidate_index].x,
                    candidate_keypoints[m.candidate_index].y,
                )
                for m in inliers
            ]
        )
        errors = symmetric_transfer_errors(homography.as_array(), src, dst)
        mean_error = float(errors.mean())
        homography_score = (
            math.exp(-mean_error / reproj_threshold) if math.isfinite(mean_error) else 0.0
        )
    return VerificationScores(
        inlier_ratio=inlier_ratio,
        spatial=spatial,
        scale=scale,
        homography_score=homography_score,
        n_inliers=n_inliers,
        n_matches=n_matches,
        confidence=None,
    )


def confidence_and_decision(
    scores_a: VerificationScores, scores_b: VerificationScores
) -> tuple[float, bool]:
    """Pairwise swap test: challenger b against incumbent a."""
    n_a, n_b = scores_a.n_inliers, scores_b.n_inliers
    inlier_difference = min(max((n_b - n_a) / max(n_a, n_b, 1), 0.0), 1.0)
    confidence = (
        0.4 * inlier_difference
        + 0.3 * scores_b.inlier_ratio
        + 0.2 * scores_b.homography_score
        + 0.1 * scores_b.spatial
    )
    rerank = confidence > RERANK_CONFIDENCE and n_b > RERANK_MIN_INLIERS
    return confidence, rerank


def _run_pipeline(
    detected_q,
    detected_c,
    tau: float,
    config: RansacConfig,
    width: int,
    height: int,
) -> tuple[VerificationScores, Homography | None, np.ndarray, list[MatchPair]]:
    if not detected_q or not detected_c:
        return ZERO_SCORES, None, np.zeros(0, dtype=bool), []
    kp_q = [kp for kp, _ in detected_q]
    kp_c = [kp for kp, _ in detected_c]
    matches = match_ratio(
        [d for _, d in detected_q], [d for _, d in detected_c], tau
    )
    if len(matches) < config.min_matches:
        empty = np.zeros(len(matches), dtype=bool)
        scores = compute_scores(
            matches, empty, None, kp_q, kp_c, width, height, config.reproj_threshold
        )
        return scores, None, empty, matches
    src = [(kp_q[m.query_index].x, kp_q[m.query_index].y) for m in matches]
    dst = [(kp_c[m.candidate_index].x, kp_c[m.candidate_index].y) for m in matches]
    homography, mask = ransac_homography(src, dst, config)
    scores = compute_scores(
        matches, mask, homography, kp_q, kp_c, width, height, config.reproj_threshold
    )
    return scores, homography, mask, matches


def verify_pair(
    query: GrayImage,
    candidate: GrayImage,
    config: RansacConfig = RansacConfig(),
    tau: float = DEFAULT_RATIO,
    max_features: int = 500,
) -> VerificationReport:
    """Run the binary and float pipelines and report the stronger one.

    The pipeline with more inliers wins; ties go to the float pipeline. The
    report's confidence is the standalone reading (no incumbent, so the
    inlier-difference term is zero). Unverifiable pairs produce zero scores
    and rerank False.
    """
    binary_result = _run_pipeline(
        detect_describe_binary(query, max_features=max_features),
        detect_describe_binary(candidate, max_features=max_features),
        tau,
        config,
        query.width,
        query.height,
    )
    float_result = _run_pipeline(
        detect_describe_float(query),
        detect_describe_float(candidate),
        tau,
        config,
        query.width,
        query.height,
    )
    chosen = (
        binary_result
        if binary_result[0].n_inliers > float_result[0].n_inliers
        else float_result
    )
    scores, homography, mask, _ = chosen
    # standalone reading: no incumbent, so the inlier-difference term is zero
    confidence = (
        0.3 * scores.inlier_ratio
        + 0.2 * scores.homography_score
        + 0.1 * scores.spatial
    )
    rerank = confidence > RERANK_CONFIDENCE and scores.n_inliers > RERANK_MIN_INLIERS
    return VerificationReport(
        scores=replace(scores, confidence=confidence),
        homography=homography,
        inlier_mask=tuple(bool(b) for b in mask),
        rerank=rerank,
    )


def report_to_json(report: VerificationReport) -> dict:
    scores = report.scores
    return {
        "scores": {
            "inlier_ratio": scores.inlier_ratio,
            "spatial": scores.spatial,
            "scale": scores.scale,
            "homography_score": scores.homography_score,
            "confidence": scores.confidence,
            "n_inliers": scores.n_inliers,
            "n_matches": scores.n_matches,
        },
        "homography": (
            [list(row) for row in report.homography.rows]
            if report.homography is not None
            else None
        ),
        "inlier_mask": [bool(b) for b in report.inlier_mask],
        "rerank": report.rerank,
    }
