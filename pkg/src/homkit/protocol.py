"""Benchmark protocol: grid search on the train split, iteration sweep on the test split.

Tuned parameters are handed to the test stage as sealed, digest-checked
values, so the test stage has no way to adjust them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from homkit.covest import TABLE_COLUMNS, aggregate_rows, compare_case, compare_four
from homkit.dataset import Dataset
from homkit.geom import calibrate_homography
from homkit.metrics import PairErrors, assign_scale, average_summaries, default_grids, summarize_scene, translation_abs_error
from homkit.robust import EstimatorConfig, estimate
from homkit.robust.scoring import forward_residuals
from homkit.synth import TestCase, best_decomposition
from homkit.uncert import StatsFilter, UncertAccumulator, compute_residuals

METHOD_PRESETS = {
    "lsq": {"scorer": "lsq"},
    "ransac": {"scorer": "ransac"},
    "msac": {"scorer": "msac"},
    "lmeds": {"scorer": "lmeds"},
    "lo-ransac": {"scorer": "ransac", "local_opt": "lo_plus"},
    "prosac": {"scorer": "ransac", "sampler": "prosac"},
    "affine-ransac": {"scorer": "ransac", "solver": "two_ac"},
}

SWEEP_COLUMNS = (
    "method", "max_iter", "rot_mAA", "trans_mAA", "combined_mAA",
    "abs_trans_mAA", "reproj_mAA", "median_inliers", "median_time_s",
)
TIMING_COLUMNS = ("median_time_s",)


class SealError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    grid: dict = field(default_factory=lambda: {"threshold": (0.5, 1.0, 2.0, 3.0, 4.0, 8.0), "snn_threshold": (None,)})
    # per-method replacements of grid entries
    method_grids: dict = field(default_factory=dict)
    train_iterations: int = 1000
    sweep: tuple = (10, 100, 1000, 10000)
    confidence: float = 0.999
    seed: int = 0
    jobs: int = 1
    meter_steps: int = 20

    def __post_init__(self):
        if not self.grid or any(len(v) == 0 for v in self.grid.values()):
            raise ValueError("grid must be nonempty")
        if not self.sweep or any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise ValueError("iteration sweep must be nonempty and strictly ascending")
        if self.train_iterations < 1 or self.jobs < 1:
            raise ValueError("iterations and jobs must be positive")

    def grid_for(self, method):
        g = dict(self.grid)
        g.update(self.method_grids.get(method, {}))
        keys = sorted(g)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(g[k] for k in keys))]

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("sweep",):
            if k in d:
                d[k] = tuple(d[k])
        if "grid" in d:
            d["grid"] = {k: tuple(v) for k, v in d["grid"].items()}
        return cls(**d)


def _digest(method, params):
    blob = json.dumps({"method": method, "params": params}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class TunedConfig:
    """Method name plus the selected parameters, sealed by a content digest."""

    method: str
    params: tuple  # sorted (key, value) items
    digest: str

    @classmethod
    def seal(cls, method, params: dict):
        if method not in METHOD_PRESETS:
            raise ValueError(f"unknown method {method!r}")
        items = tuple(sorted(params.items()))
        return cls(method, items, _digest(method, dict(items)))

    def verify(self):
        if _digest(self.method, dict(self.params)) != self.digest:
            raise SealError(f"tuned config for {self.method!r} was modified after sealing")
        return self

    def estimator_config(self, max_iterations, confidence, seed):
        self.verify()
        return EstimatorConfig(
            max_iterations=max_iterations, confidence=confidence, seed=seed,
            **METHOD_PRESETS[self.method], **dict(self.params),
        )

    def to_dict(self):
        return {"method": self.method, "params": dict(self.params), "digest": self.digest}

    @classmethod
    def from_dict(cls, d):
        return cls(d["method"], tuple(sorted(d["params"].items())), d["digest"]).verify()


def task_seed(seed, method, case_id):
    """Per-task seed from the run seed, the method and the pair."""
    ss = np.random.SeedSequence([seed, zlib.crc32(method.encode()), zlib.crc32(str(case_id).encode())])
    return int(ss.generate_state(1)[0])


def evaluate_case(case: TestCase, config: EstimatorConfig) -> PairErrors:
    """Run one estimator on one case and score it against the ground truth."""
    res = estimate(case.correspondences, config)
    if not res.success:
        return PairErrors.failed(res.runtime_s)
    Hn = calibrate_homography(res.homography, case.K1, case.K2)
    cand, er, et = best_decomposition(Hn, case.gt_pose)
    t_gt = case.gt_pose.translation * case.scene_scale
    if cand.normal is None or np.linalg.norm(cand.translation) == 0 or np.linalg.norm(t_gt) == 0:
        ea = math.inf
    else:
        ea = translation_abs_error(t_gt, assign_scale(cand.translation, t_gt))
    c = case.correspondences
    if len(case.inliers):
        rep = float(np.mean(forward_residuals(res.homography, c.pts1[case.inliers], c.pts2[case.inliers])))
    else:
        rep = math.inf
    return PairErrors(er, et, ea, rep, res.n_inliers, res.runtime_s)


def _run_task(args):
    case, cfg = args
    return evaluate_case(case, cfg)


def _map(tasks, jobs):
    if jobs <= 1 or len(tasks) < 2:
        return [_run_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _scene_average(scenes, errors, grids):
    """Scene-averaged summary of per-case errors laid out scene by scene."""
    out, k = [], 0
    for s in scenes:
        n = len(s.cases)
        if n:
            out.append(summarize_scene(errors[k : k + n], grids))
        k += n
    return average_summaries(out)


def _cases(scenes):
    return [c for s in scenes for c in s.cases]


def run_training(dataset: Dataset, methods, pcfg: ProtocolConfig = ProtocolConfig()):
    """Grid search per method on the train split.

    Returns ``(tuned, table)``: the sealed best configuration per method
    (maximal scene-averaged combined pose mAA; ties keep the earlier grid
    point) and one table row per evaluated grid point.
    """
    scenes = [s for s in dataset.split("train") if s.cases]
    if not scenes:
        raise ValueError("train split is empty")
    grids = default_grids(pcfg.meter_steps)
    cases = _cases(scenes)
    tuned, table = {}, []
    for method in methods:
        if method not in METHOD_PRESETS:
            raise ValueError(f"unknown method {method!r}")
        points = pcfg.grid_for(method)
        best = None
        for params in points:
            tasks = [
                (c, EstimatorConfig(max_iterations=pcfg.train_iterations, confidence=pcfg.confidence,
                                    seed=task_seed(pcfg.seed, method, c.case_id), **METHOD_PRESETS[method], **params))
                for c in cases
            ]
            avg = _scene_average(scenes, _map(tasks, pcfg.jobs), grids)
            table.append({"method": method, **{k: params[k] for k in sorted(params)}, "combined_mAA": avg["combined"]})
            if best is None or avg["combined"] > best[0]:
                best = (avg["combined"], params)
        tuned[method] = TunedConfig.seal(method, best[1])
    return tuned, table


def run_test(dataset: Dataset, tuned, pcfg: ProtocolConfig = ProtocolConfig()):
    """Iteration sweep of the sealed configurations on the test split; one row per (method, max_iter)."""
    scenes = [s for s in dataset.split("test") if s.cases]
    if not scenes:
        raise ValueError("test split is empty")
    grids = default_grids(pcfg.meter_steps)
    cases = _cases(scenes)
    rows = []
    for method, tc in tuned.items():
        if not isinstance(tc, TunedConfig):
            raise TypeError("run_test accepts sealed TunedConfig values only")
        if tc.method != method:
            raise ValueError(f"config for {tc.method!r} registered under {method!r}")
        tc.verify()
        for it in pcfg.sweep:
            tasks = [(c, tc.estimator_config(it, pcfg.confidence, task_seed(pcfg.seed, method, c.case_id))) for c in cases]
            avg = _scene_average(scenes, _map(tasks, pcfg.jobs), grids)
            rows.append({
                "method": method,
                "max_iter": it,
                "rot_mAA": avg["rot_deg"],
                "trans_mAA": avg["trans_angle_deg"],
                "combined_mAA": avg["combined"],
                "abs_trans_mAA": avg["trans_abs_m"],
                "reproj_mAA": avg["reproj_px"],
                "median_inliers": avg["median_inliers"],
                "median_time_s": avg["median_runtime_s"],
            })
    return rows


def rows_to_csv(rows, columns, drop=()):
    buf = io.StringIO()
    cols = [c for c in columns if c not in drop]
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r[c] for c in cols})
    return buf.getvalue()


def sweep_csv(rows, with_timing=True):
    return rows_to_csv(rows, SWEEP_COLUMNS, () if with_timing else TIMING_COLUMNS)


def run_uncertainty(dataset: Dataset, cond_max=1.5, r_ref_range=(0.5, 2.0)):
    """Keypoint uncertainty reports over the ground-truth inliers, per scene and global."""
    filt = StatsFilter(cond_max, tuple(r_ref_range))
    total = UncertAccumulator(filt)
    per_scene = {}
    for s in dataset.scenes:
        acc = UncertAccumulator(filt)
        for c in s.cases:
            if len(c.inliers):
                acc.add(compute_residuals(c.correspondences.subset(c.inliers), c.homography_pixel))
        total.merge(acc)
        if acc.n_kept:
            per_scene[s.name] = acc.report()
    return {"global": total.report(), "scenes": per_scene}


COVEST_EXTRA = ("rmse_reference", "rmse_alg", "rmse_ml1", "rmse_mls", "rmsew_reference", "rmsew_alg", "rmsew_ml1", "rmsew_mls")


def run_covest(dataset: Dataset, sigma=1.0, min_points=5):
    """Estimator comparison table over the ground-truth inliers of every case.

    Returns ``(rows, mean_row, max_row)``; rows carry the table columns plus
    RMSE and weighted RMSE of the four homographies.
    """
    rows = []
    names = {"reference": "reference", "algebraic": "alg", "ml_equal": "ml1", "ml_scale": "mls"}
    for s in dataset.scenes:
        for c in s.cases:
            if len(c.inliers) < min_points:
                continue
            corrs = c.correspondences.subset(c.inliers)
            cmp = compare_case(corrs, sigma)
            four = compare_four(corrs, c.homography_pixel, cmp.fits)
            row = {"scene": s.name, "case": c.case_id, **cmp.row()}
            for k, short in names.items():
                row[f"rmse_{short}"] = four[k]["rmse"]
                row[f"rmsew_{short}"] = four[k]["rmse_w"]
            rows.append(row)
    if not rows:
        raise ValueError("no case has enough ground-truth inliers")
    mean_row, max_row = aggregate_rows(rows, TABLE_COLUMNS + COVEST_EXTRA)
    return rows, mean_row, max_row


COVEST_COLUMNS = ("scene", "case") + TABLE_COLUMNS + COVEST_EXTRA
