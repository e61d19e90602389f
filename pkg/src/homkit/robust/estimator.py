"""Hypothesize-and-verify homography estimation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from homkit.correspondences import Correspondences
from homkit.geom import DegenerateConfigurationError, affinity_from_sift, dlt
from homkit.robust.sampling import ProsacSampler, sample_uniform
from homkit.robust.scoring import (
    loss,
    ransac_iterations_needed,
    residuals,
    sample_cheirality_check,
    score_residuals,
)
from homkit.robust.solvers import solver_two_ac

PREFILTER_KINDS = ("none", "score_threshold", "top_k")


@dataclass(frozen=True)
class Prefilter:
    kind: str = "none"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in PREFILTER_KINDS:
            raise ValueError(f"unknown prefilter {self.kind!r}")
        if self.kind != "none" and self.value is None:
            raise ValueError(f"prefilter {self.kind!r} needs a value")
        if self.kind == "top_k" and int(self.value) < 1:
            raise ValueError("top_k needs K >= 1")


@dataclass(frozen=True)
class EstimatorConfig:
    threshold: float = 3.0
    confidence: float = 0.99
    max_iterations: int = 1000
    min_iterations: int = 1
    snn_threshold: float | None = None
    prefilter: Prefilter = field(default_factory=Prefilter)
    sampler: str = "uniform"
    scorer: str = "ransac"
    local_opt: str = "none"
    solver: str = "four_point"
    residual: str = "forward"
    seed: int = 0
    # a model explaining fewer correspondences than this is reported as a failure
    min_inliers: int = 8
    # PROSAC ordering key: "snn" (ascending) or "score" (descending)
    quality: str = "snn"
    prosac_growth: int = 200_000

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("inlier threshold must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if not self.max_iterations >= self.min_iterations >= 1:
            raise ValueError("need max_iterations >= min_iterations >= 1")
        if self.sampler not in ("uniform", "prosac"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.scorer not in ("ransac", "msac", "lmeds", "lsq"):
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.local_opt not in ("none", "lo_plus"):
            raise ValueError(f"unknown local optimization {self.local_opt!r}")
        if self.solver not in ("four_point", "two_ac"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.residual not in ("forward", "symmetric"):
            raise ValueError(f"unknown residual {self.residual!r}")
        if self.quality not in ("snn", "score"):
            raise ValueError(f"unknown quality key {self.quality!r}")
        if not isinstance(self.prefilter, Prefilter):
            object.__setattr__(self, "prefilter", Prefilter(**dict(self.prefilter)))

    @property
    def sample_size(self):
        return 2 if self.solver == "two_ac" else 4


@dataclass
class EstimateResult:
    homography: np.ndarray | None
    inlier_mask: np.ndarray
    score: float
    iterations_used: int
    runtime_s: float

    @property
    def success(self):
        return self.homography is not None

    @property
    def n_inliers(self):
        return int(self.inlier_mask.sum())


def prefilter(corrs: Correspondences, mode: Prefilter = Prefilter(), snn_threshold=None):
    """Select correspondences; returns ``(subset, original_indices)``.

    The SNN test keeps ``snn <= snn_threshold``.  ``score_threshold`` keeps
    scores at or above the value in input order; ``top_k`` keeps the K best
    scores ordered by descending score.
    """
    idx = np.arange(len(corrs))
    if snn_threshold is not None:
        idx = idx[corrs.snn[idx] <= snn_threshold]
    if mode.kind != "none":
        if not corrs.has_score:
            raise KeyError(f"prefilter {mode.kind!r} requires a score column")
        scores = corrs.score[idx]
        if mode.kind == "score_threshold":
            idx = idx[scores >= mode.value]
        else:
            order = np.argsort(-scores, kind="stable")
            idx = idx[order[: int(mode.value)]]
    return corrs.subset(idx), idx


def lo_refine(pts1, pts2, H, threshold, scorer="msac", residual="forward", steps=4):
    """Local optimization of a so-far-best model.

    A least-squares fit on the current inliers is followed by iteratively
    reweighted DLT fits whose inlier threshold shrinks from ``4 * threshold``
    to ``threshold``.  Iterates are ranked by the truncated quadratic (MSAC)
    cost, which separates a tight fit from a loose one with the same inlier
    count; only iterates that are no worse than the input under ``scorer``
    are eligible.  Returns ``(H, score, mask)`` with ``score`` under ``scorer``.
    """
    def evaluate(cand):
        r = residuals(cand, pts1, pts2, residual)
        s, mask = score_residuals(r, scorer, threshold)
        return s, mask, score_residuals(r, "msac", threshold)[0]

    s0, m0, c0 = evaluate(H)
    floor = loss(scorer, s0)
    best = (H, s0, m0)
    best_cost = c0
    if m0.sum() < 4:
        return best

    def consider(cand):
        nonlocal best, best_cost
        s, mask, cost = evaluate(cand)
        if loss(scorer, s) <= floor and cost < best_cost:
            best, best_cost = (cand, s, mask), cost

    try:
        current = dlt(pts1[m0], pts2[m0])
    except DegenerateConfigurationError:
        return best
    consider(current)
    for tau in np.linspace(4.0 * threshold, threshold, steps):
        r = residuals(current, pts1, pts2, residual)
        sel = r <= tau
        if sel.sum() < 4:
            break
        w = 1.0 - (r[sel] / tau) ** 2
        try:
            current = dlt(pts1[sel], pts2[sel], weights=w)
        except DegenerateConfigurationError:
            break
        consider(current)
    return best


def _failure(n, iterations, t0):
    return EstimateResult(None, np.zeros(n, dtype=bool), math.nan, iterations, time.perf_counter() - t0)


def estimate(corrs, config: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Robustly fit a pixel homography to ``corrs`` (mapping image 1 to image 2).

    Deterministic for a fixed ``config.seed``.  The returned inlier mask is
    indexed like the input and equals ``residual <= threshold`` under the
    returned homography.
    """
    t0 = time.perf_counter()
    if not isinstance(corrs, Correspondences):
        corrs = Correspondences(corrs)
    n_all = len(corrs)
    sub, idx = prefilter(corrs, config.prefilter, config.snn_threshold)
    m = config.sample_size
    if len(sub) < (4 if config.scorer == "lsq" else m):
        return _failure(n_all, 0, t0)

    if config.sampler == "prosac":
        key = -sub.score if config.quality == "score" else sub.snn
        order = np.argsort(key, kind="stable")
        sub, idx = sub.subset(order), idx[order]
    pts1, pts2 = sub.pts1, sub.pts2
    n = len(sub)
    theta = config.threshold

    if config.scorer == "lsq":
        try:
            H = dlt(pts1, pts2)
        except DegenerateConfigurationError:
            return _failure(n_all, 1, t0)
        return _finalize(corrs, pts1, pts2, H, config, 1, t0, scorer="msac")

    affinities = None
    if config.solver == "two_ac":
        affinities = affinity_from_sift(sub.phi1, sub.s1, sub.phi2, sub.s2)

    rng = np.random.default_rng(config.seed)
    prosac = ProsacSampler(n, m, config.prosac_growth) if config.sampler == "prosac" else None
    best_H, best_loss, best_mask = None, math.inf, None
    needed = config.max_iterations
    it = 0
    while it < config.max_iterations and (it < config.min_iterations or it < needed):
        it += 1
        sample = prosac.sample(it, rng) if prosac is not None else sample_uniform(n, m, rng)
        try:
            if affinities is None:
                H = dlt(pts1[sample], pts2[sample])
            else:
                H = solver_two_ac(pts1[sample], pts2[sample], affinities[sample])
        except DegenerateConfigurationError:
            continue
        if not sample_cheirality_check(pts1[sample], H):
            continue
        s, mask = score_residuals(residuals(H, pts1, pts2, config.residual), config.scorer, theta)
        if loss(config.scorer, s) >= best_loss:
            continue
        best_H, best_loss, best_mask = H, loss(config.scorer, s), mask
        if config.scorer != "lmeds":
            needed = ransac_iterations_needed(mask.sum() / n, m, config.confidence, config.max_iterations)

    if best_H is None:
        return _failure(n_all, it, t0)

    if config.local_opt == "lo_plus":
        best_H, s, best_mask = lo_refine(pts1, pts2, best_H, theta, config.scorer, config.residual)
        best_loss = loss(config.scorer, s)
    best_H = _polish(pts1, pts2, best_H, best_loss, best_mask, config)
    return _finalize(corrs, pts1, pts2, best_H, config, it, t0)


def _polish(pts1, pts2, H, best_loss, mask, config, rounds=10):
    # least-squares refits on the current inliers while the score does not get worse
    for _ in range(rounds):
        if mask.sum() < 4:
            break
        try:
            cand = dlt(pts1[mask], pts2[mask])
        except DegenerateConfigurationError:
            break
        s, new_mask = score_residuals(residuals(cand, pts1, pts2, config.residual), config.scorer, config.threshold)
        if loss(config.scorer, s) > best_loss:
            break
        H, best_loss = cand, loss(config.scorer, s)
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    return H


def _finalize(corrs, pts1, pts2, H, config, iterations, t0, scorer=None):
    scorer = scorer or config.scorer
    s, used_mask = score_residuals(residuals(H, pts1, pts2, config.residual), scorer, config.threshold)
    if config.scorer != "lsq" and used_mask.sum() < config.min_inliers:
        return _failure(len(corrs), iterations, t0)
    r_all = residuals(H, corrs.pts1, corrs.pts2, config.residual)
    return EstimateResult(H, r_all <= config.threshold, s, iterations, time.perf_counter() - t0)
