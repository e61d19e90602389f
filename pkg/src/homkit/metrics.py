"""Per-pair pose and reprojection errors and their scene-level aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

METRICS = ("rot_deg", "trans_angle_deg", "trans_abs_m", "reproj_px")


@dataclass(frozen=True)
class ThresholdGrid:
    thresholds: tuple
    unit: str

    def __post_init__(self):
        th = tuple(float(x) for x in self.thresholds)
        if not th:
            raise ValueError("threshold grid must be nonempty")
        if any(x <= 0 for x in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("thresholds must be positive and strictly increasing")
        object.__setattr__(self, "thresholds", th)

    def __len__(self):
        return len(self.thresholds)


def degree_grid():
    return ThresholdGrid(tuple(range(1, 11)), "degrees")


def meter_grid(steps=20):
    return ThresholdGrid(tuple(np.linspace(0.1, 5.0, steps)), "meters")


def pixel_grid():
    return ThresholdGrid(tuple(range(1, 21)), "pixels")


def default_grids(meter_steps=20):
    return {
        "rot_deg": degree_grid(),
        "trans_angle_deg": degree_grid(),
        "trans_abs_m": meter_grid(meter_steps),
        "reproj_px": pixel_grid(),
    }


@dataclass(frozen=True)
class PairErrors:
    rot_deg: float
    trans_angle_deg: float
    trans_abs_m: float
    reproj_px: float
    inlier_count: int = 0
    runtime_s: float = 0.0

    @classmethod
    def failed(cls, runtime_s=0.0):
        return cls(math.inf, math.inf, math.inf, math.inf, 0, runtime_s)


def rotation_error(R, R_est):
    """Angle in degrees of ``R_est R^T``.

    Evaluated as ``atan2(sin, cos)`` of the relative rotation, which equals
    ``arccos((tr - 1) / 2)`` but keeps full precision near 0 and 180 degrees.
    """
    Q = np.asarray(R_est, dtype=float) @ np.asarray(R, dtype=float).T
    sin_half_vee = 0.5 * np.array([Q[2, 1] - Q[1, 2], Q[0, 2] - Q[2, 0], Q[1, 0] - Q[0, 1]])
    cos = 0.5 * (np.trace(Q) - 1.0)
    return math.degrees(math.atan2(np.linalg.norm(sin_half_vee), cos))


def translation_angle_error(t, t_est):
    """Angle in degrees between two translation directions."""
    t = np.asarray(t, dtype=float)
    t_est = np.asarray(t_est, dtype=float)
    if np.linalg.norm(t) == 0 or np.linalg.norm(t_est) == 0:
        raise ValueError("translation angle undefined for a zero vector")
    return math.degrees(math.atan2(np.linalg.norm(np.cross(t, t_est)), float(t @ t_est)))


def assign_scale(t_est, t):
    """Rescale ``t_est`` to the length of the reference translation ``t``."""
    t_est = np.asarray(t_est, dtype=float)
    n = np.linalg.norm(t_est)
    if n == 0:
        raise ValueError("cannot assign scale to a zero translation")
    return t_est * (np.linalg.norm(t) / n)


def translation_abs_error(t, t_est_scaled):
    return float(np.linalg.norm(np.asarray(t, dtype=float) - np.asarray(t_est_scaled, dtype=float)))


def maa(errors, grid: ThresholdGrid):
    """Mean over thresholds of the fraction of errors at or below each threshold."""
    e = np.asarray(errors, dtype=float).reshape(-1)
    if e.size == 0:
        raise ValueError("empty error list")
    e = np.where(np.isnan(e), np.inf, e)
    th = np.asarray(grid.thresholds)
    return float(np.mean((e[None, :] <= th[:, None]).mean(axis=1)))


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    median: float
    maa: float


@dataclass(frozen=True)
class SceneSummary:
    metrics: dict
    combined_maa: float
    n_pairs: int
    median_inliers: float = 0.0
    median_runtime_s: float = 0.0
    extras: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.metrics[name]


def summarize_scene(pairs, grids=None) -> SceneSummary:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("cannot summarize an empty scene")
    grids = grids or default_grids()
    out = {}
    for name in METRICS:
        e = np.array([getattr(p, name) for p in pairs], dtype=float)
        out[name] = MetricSummary(float(np.mean(e)), float(np.median(e)), maa(e, grids[name]))
    combined = 0.5 * (out["rot_deg"].maa + out["trans_angle_deg"].maa)
    return SceneSummary(
        metrics=out,
        combined_maa=combined,
        n_pairs=len(pairs),
        median_inliers=float(np.median([p.inlier_count for p in pairs])),
        median_runtime_s=float(np.median([p.runtime_s for p in pairs])),
    )


def average_summaries(summaries):
    """Scene-averaged mAA values of several :class:`SceneSummary` objects."""
    summaries = list(summaries)
    if not summaries:
        raise ValueError("no scenes to average")
    out = {name: float(np.mean([s[name].maa for s in summaries])) for name in METRICS}
    out["combined"] = float(np.mean([s.combined_maa for s in summaries]))
    out["median_inliers"] = float(np.mean([s.median_inliers for s in summaries]))
    out["median_runtime_s"] = float(np.mean([s.median_runtime_s for s in summaries]))
    return out
