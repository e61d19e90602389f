"""Point-to-model residuals and model quality functions."""

from __future__ import annotations

import math

import numpy as np

from homkit.geom import W_EPS, transfer_or_inf

SCORERS = ("ransac", "msac", "lmeds")


def forward_residuals(H, pts1, pts2):
    """One-sided reprojection error in the second image; ``inf`` at infinity."""
    return np.linalg.norm(pts2 - transfer_or_inf(H, pts1), axis=1)


def symmetric_residuals(H, pts1, pts2):
    try:
        Hinv = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return np.full(len(pts1), np.inf)
    fwd = np.sum((pts2 - transfer_or_inf(H, pts1)) ** 2, axis=1)
    bwd = np.sum((pts1 - transfer_or_inf(Hinv, pts2)) ** 2, axis=1)
    return np.sqrt(fwd + bwd)


def residuals(H, pts1, pts2, kind="forward"):
    if kind == "forward":
        return forward_residuals(H, pts1, pts2)
    if kind == "symmetric":
        return symmetric_residuals(H, pts1, pts2)
    raise ValueError(f"unknown residual kind {kind!r}")


def score_residuals(r, scorer, threshold):
    """Return ``(score, inlier_mask)`` for residuals ``r``.

    ``ransac`` scores are inlier counts (higher is better); ``msac`` and
    ``lmeds`` scores are costs (lower is better).
    """
    mask = r <= threshold
    if scorer == "ransac":
        return int(mask.sum()), mask
    if scorer == "msac":
        return float(np.minimum(r * r, threshold * threshold).sum()), mask
    if scorer == "lmeds":
        return float(np.median(r * r)), mask
    raise ValueError(f"unknown scorer {scorer!r}")


def score(pts1, pts2, H, scorer, threshold, residual="forward"):
    return score_residuals(residuals(H, pts1, pts2, residual), scorer, threshold)


def loss(scorer, value):
    """Map a score onto a lower-is-better scale for comparisons."""
    return -value if scorer == "ransac" else value


def sample_cheirality_check(pts1, H):
    """True iff the homogeneous scale ``(H x)_3`` has one sign over the sample."""
    w = np.asarray(pts1, dtype=float) @ H[2, :2] + H[2, 2]
    if np.any(np.abs(w) <= W_EPS):
        return False
    return bool(np.all(w > 0) or np.all(w < 0))


def ransac_iterations_needed(inlier_ratio, m, confidence, max_iterations):
    """Iterations to draw one all-inlier sample with probability ``confidence``."""
    if inlier_ratio <= 0:
        return max_iterations
    if inlier_ratio >= 1:
        return 1
    p_good = inlier_ratio**m
    denom = math.log1p(-p_good)
    if denom == 0:
        return max_iterations
    needed = math.ceil(math.log(1.0 - confidence) / denom)
    return int(min(max(needed, 1), max_iterations))
