"""Frozen 256-pair sampling pattern for the binary descriptor.

Each entry is (ax, ay, bx, by): two offsets inside a radius-15 disc around
the keypoint. Bit i of the descriptor is 1 iff I(a_i) < I(b_i) after the
pattern is rotated to the keypoint orientation. The table was produced once
by generate_pattern() below (seeded draw with greedy rejection of
near-duplicate tests) and committed; regenerating must reproduce it exactly.
"""

from __future__ import annotations

import random

PATTERN_RADIUS = 15
PATTERN_SEED = 20240901
PATTERN_MIN_SEPARATION = 2

PATTERN: tuple[tuple[int, int, int, int], ...] = (
    (1, -1, 4, 1), (6, 9, 9, -7), (-6, 2, 0, -5), (-12, 1, 9, -1),
    (-7, -10, -6, -8), (5, -3, -2, -2), (3, 9, 1, -11), (10, -2, 7, -6),
    (-5, -11, -1, 9), (3, -1, -7, -13), (7, -6, -4, -2), (0, 12, 5, -5),
    (6, 0, 1, 5), (1, -1, 8, -11), (5, -10, 1, -9), (5, 14, 1, -11),
    (-6, 0, -13, 6), (-8, 5, -1, 14), (-7, 1, 0, -12), (-2, -2, 3, 13),
    (1, 12, -4, 14), (5, 8, 2, 4), (3, -8, -9, -8), (2, -12, 9, 4),
    (11, 5, -1, 4), (1, -14, -14, 1), (5, -11, -9, -2), (-7, -10, 0, 5),
    (-5, 6, 2, -10), (10, -6, -7, 7), (2, 7, 6, 8), (2, 9, 11, 10),
    (-3, 12, -8, -11), (1, 5, 6, 12), (3, 3, 0, -5), (-14, -5, 5, -13),
    (-1, 9, -9, 12), (-8, -12, 11, 0), (8, -12, -12, 3), (12, -2, -13, 4),
    (-7, -3, 9, -11), (-4, 6, -11, -1), (11, 1, -3, 12), (-8, 4, 14, -4),
    (10, 4, -9, -8), (-2, 2, 4, 14), (-6, 13, 9, -9), (-10, 2, 1, -3),
    (0, -5, 11, 9), (1, 10, -6, 10), (3, 3, 3, 11), (-10, -9, -8, 3),
    (2, 13, 1, -1), (-11, -4, -10, -4), (1, -13, 8, -11), (-2, 0, 1, 2),
    (4, -5, -12, 0), (10, -1, -10, 7), (-10, -6, 1, 6), (1, 2, -12, 8),
    (5, -14, -10, -8), (-8, 7, 12, 4), (9, -12, -8, -9), (1, -3, -6, -3),
    (-12, -8, -10, -11), (4, -4, -7, 1), (10, 10, -5, -7), (13, 1, -3, 9),
    (8, -10, 0, -5), (9, 9, -13, -2), (6, 6, 3, -11), (1, 9, -10, -3),
    (-9, -10, 7, -1), (-8, 11, 10, 6), (-7, 2, -5, 6), (-1, 1, -4, -9),
    (-7, 12, 11, 1), (10, -9, -2, 14), (1, -14, -12, -4), (3, -11, -5, -6),
    (-3, 3, -4, -14), (-11, -3, -9, 0), (3, -4, -11, -10), (1, -11, -5, -9),
    (-13, 1, -9, 3), (13, 4, 7, 11), (5, 7, -2, -14), (3, 8, 7, -10),
    (2, -14, -6, -7), (-8, -1, -2, 12), (2, -6, 13, 4), (-4, 9, 5, -9),
    (9, 2, 6, -12), (-11, 1, -6, -8), (-8, 0, 13, 2), (-14, 4, 11, -6),
    (-2, 5, 7, 7), (9, -10, -8, 5), (1, -14, 5, -10), (1, 10, 1, 12),
    (12, -1, -4, -4), (12, 9, -10, -3), (2, -2, -3, 0), (-9, 12, 12, -4),
    (-6, 10, 0, 15), (7, 1, -11, 9), (-7, 8, -2, 12), (-1, 6, 0, -7),
    (-5, 14, 12, 9), (13, 0, -3, -14), (5, 8, -9, 10), (-9, -8, 1, -11),
    (-6, 9, 5, -12), (-4, -11, 7, 3), (5, -3, 1, -14), (8, -7, -8, 3),
    (7, 9, -14, 3), (-3, -13, 2, 9), (-6, -12, -5, 6), (2, 5, 0, 15),
    (9, 7, -4, -4), (14, -4, -3, 10), (8, 1, 1, -9), (1, 2, -1, 8),
    (-3, -12, -7, 4), (0, -14, 9, 11), (-14, 4, -12, -6), (-6, -6, -6, -5),
    (4, -7, -10, 4), (9, 9, 4, -1), (11, 4, -14, 4), (-4, -3, -8, 12),
    (11, 4, -12, -7), (-13, -7, 5, -1), (2, 7, -10, 1), (4, 4, -7, 6),
    (10, 8, -10, -8), (-7, 11, -8, -3), (2, -6, 15, 0), (0, -9, -6, -6),
    (5, 12, 12, -2), (6, 5, 6, -8), (8, 2, 6, -9), (-3, -12, 2, 3),
    (-11, -3, 0, 2), (-4, 3, -1, 7), (1, 7, -4, -4), (5, -9, 11, 1),
    (-7, -9, -10, 7), (11, -8, 0, 9), (-12, -8, 0, -3), (1, 1, -10, -7),
    (10, -11, 9, 7), (-2, -8, -10, -10), (-3, 4, -12, -4), (5, -2, -2, -5),
    (13, -4, 0, -9), (6, -2, 7, 13), (-5, -11, 10, -5), (-4, 5, 11, -7),
    (-15, 0, 8, 2), (6, -10, -9, 12), (-1, 6, 3, -11), (-7, 8, 6, 1),
    (-10, -3, -4, -9), (-4, 9, -4, 0), (4, -11, -12, 5), (2, 4, -1, -9),
    (-8, -1, 3, 3), (-14, 2, 3, 4), (-1, 13, 5, 5), (8, 0, 3, 14),
    (-6, 5, 9, 3), (-10, -8, 10, -2), (-5, 1, 9, -4), (-9, 0, -4, 9),
    (4, 6, -3, 4), (3, -3, -14, 4), (10, -7, -3, 8), (-9, 0, 3, 13),
    (14, 2, -6, 13), (-4, 1, 13, 4), (-5, -3, -2, 14), (-4, 0, -2, -9),
    (13, -4, 2, 11), (-3, 6, 0, 11), (-3, -7, -13, -3), (3, 11, 6, -6),
    (10, -6, -5, -5), (-5, -12, 7, 10), (8, 12, -5, 12), (-6, 11, 9, -3),
    (2, 13, -8, -3), (1, 2, 11, -3), (6, -9, 14, -2), (1, 6, 2, 7),
    (1, -11, 9, -5), (-5, 1, 14, 1), (-15, 0, -14, -2), (0, -8, -4, -9),
    (-1, -2, 12, 8), (-12, -5, -8, 7), (12, -3, 6, 0), (-9, -4, 7, 4),
    (1, -1, 14, 3), (7, -5, 11, 6), (-11, -8, -9, -1), (11, -9, 7, -3),
    (8, -2, 7, 4), (-1, 9, 4, -14), (-9, 8, 5, -2), (8, 12, -6, 7),
    (-14, 1, -4, 8), (3, -7, 11, 9), (3, 2, -3, 11), (9, 7, -13, -7),
    (1, -1, 9, 4), (0, -3, 3, 7), (-6, -8, -8, 0), (-5, 3, 5, -12),
    (7, 6, 5, 10), (0, -2, -10, 10), (-11, -9, -5, 14), (-5, -6, 9, 0),
    (10, -11, 6, -13), (12, 7, 9, 2), (6, 4, -9, -11), (-7, -8, -12, -5),
    (6, 2, 14, 5), (13, 4, 1, -13), (-8, 12, 2, -10), (0, -9, -2, -12),
    (4, -13, 5, 3), (5, -12, 3, -1), (4, -4, -9, -3), (-6, -7, 2, 6),
    (9, -10, -3, 9), (-10, -9, -10, -4), (-1, -2, -3, 10), (2, -14, 13, -2),
    (-5, -10, 5, -9), (13, -1, 1, 13), (0, -1, -14, 2), (-3, -12, -7, 13),
    (-11, 9, 13, -7), (-10, 4, 8, 2), (-5, -7, 5, -8), (12, -9, 4, 1),
    (-8, 11, -10, -9), (-12, -1, 4, 11), (13, 4, 8, 6), (-2, -1, -10, 3),
    (4, 5, 4, 4), (-11, -1, -3, 3), (12, -1, -2, -7), (-3, 13, 2, -10),
)


def generate_pattern(
    count: int = 256,
    radius: int = PATTERN_RADIUS,
    seed: int = PATTERN_SEED,
    min_separation: int = PATTERN_MIN_SEPARATION,
) -> list[tuple[int, int, int, int]]:
    """Reproduce the committed table.

    Candidate pairs are drawn uniformly inside the disc; a candidate is
    rejected when both endpoints land within Chebyshev distance
    min_separation of an already accepted pair (in either endpoint order),
    which keeps the tests from piling onto the same pixels.
    """
    rng = random.Random(seed)
    accepted: list[tuple[int, int, int, int]] = []
    rr = radius * radius

    def near(p: tuple[int, int], q: tuple[int, int]) -> bool:
        return max(abs(p[0] - q[0]), abs(p[1] - q[1])) <= min_separation

    while len(accepted) < count:
        ax, ay = rng.randint(-radius, radius), rng.randint(-radius, radius)
        bx, by = rng.randint(-radius, radius), rng.randint(-radius, radius)
        if ax * ax + ay * ay > rr or bx * bx + by * by > rr:
            continue
        if (ax, ay) == (bx, by):
            continue
        a, b = (ax, ay), (bx, by)
        duplicate = any(
            (near(a, (px, py)) and near(b, (qx, qy)))
            or (near(a, (qx, qy)) and near(b, (px, py)))
            for px, py, qx, qy in accepted
        )
        if duplicate:
            continue
        accepted.append((ax, ay, bx, by))
    return accepted
