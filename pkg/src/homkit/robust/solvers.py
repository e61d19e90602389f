"""Homography solvers for minimal and non-minimal samples."""

from __future__ import annotations

import numpy as np

from homkit.geom import (
    RANK_TOL,
    DegenerateConfigurationError,
    _apply_similarity,
    _dlt_rows,
    dlt,
    hartley_normalization,
    normalize_homography,
)


def solver_four_point(pts1, pts2, weights=None):
    return dlt(pts1, pts2, weights)


def _affine_rows(p1, p2, A):
    # w * A = H[:2, :2] - x' H[2, :2] with w = H[2] . (x, y, 1); linear in vec(H)
    rows = []
    for (x, y), (u, v), a in zip(p1, p2, A):
        for r, target in ((0, u), (1, v)):
            for c in range(2):
                row = np.zeros(9)
                row[3 * r + c] = 1.0
                row[6 + c] -= target
                row[6:9] -= a[r, c] * np.array([x, y, 1.0])
                rows.append(row)
    return np.array(rows)


def solver_two_ac(pts1, pts2, affinities):
    """Homography from affine correspondences (point pair plus local 2x2 affinity).

    Each correspondence contributes two point equations and four affine
    equations; with two correspondences the 12 x 9 system is solved by its
    smallest right singular vector.  Any number ``>= 2`` is accepted.
    """
    pts1 = np.asarray(pts1, dtype=float).reshape(-1, 2)
    pts2 = np.asarray(pts2, dtype=float).reshape(-1, 2)
    A = np.asarray(affinities, dtype=float).reshape(-1, 2, 2)
    if len(pts1) < 2:
        raise DegenerateConfigurationError("at least two affine correspondences are required")
    T1 = hartley_normalization(pts1)
    T2 = hartley_normalization(pts2)
    p1 = _apply_similarity(T1, pts1)
    p2 = _apply_similarity(T2, pts2)
    An = A * (T2[0, 0] / T1[0, 0])
    M = np.vstack([_dlt_rows(p1, p2), _affine_rows(p1, p2, An)])
    _, s, Vt = np.linalg.svd(M)
    if s[7] <= RANK_TOL * s[0]:
        raise DegenerateConfigurationError("affine correspondence system is rank deficient")
    Hn = Vt[-1].reshape(3, 3)
    return normalize_homography(np.linalg.inv(T2) @ Hn @ T1)
