"""Synthetic plane-pair scenes and the ground-truth homography validation gates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from homkit.correspondences import Correspondences
from homkit.geom import (
    DegenerateConfigurationError,
    Plane3,
    Pose,
    calibrate_homography,
    decompose_homography,
    dlt,
    homography_from_plane,
    local_affinities,
    pixel_homography,
    relative_pose,
)
from homkit.metrics import rotation_error, translation_angle_error
from homkit.robust.scoring import forward_residuals


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    image_size: tuple = (1024, 768)
    focal: float = 800.0
    n_planes: int = 1
    points_per_plane: int = 100
    noise_sigma: float = 1.0
    outlier_fraction: float = 0.5
    baseline_range: tuple = (1.5, 3.0)
    rotation_max_deg: float = 15.0
    depth_range: tuple = (3.0, 8.0)
    tilt_max_deg: float = 40.0
    angle_noise_deg: float = 12.0
    scale_log_noise: float = 0.2
    keypoint_scale_range: tuple = (1.5, 12.0)
    inlier_threshold: float = 3.0
    with_scores: bool = True
    max_retries: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.focal <= 0 or min(self.image_size) <= 0:
            raise ValueError("image size and focal length must be positive")
        if self.n_planes < 1 or self.points_per_plane < 1:
            raise ValueError("need at least one plane with one point")
        if self.noise_sigma < 0 or self.angle_noise_deg < 0 or self.scale_log_noise < 0:
            raise ValueError("noise levels must be nonnegative")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier fraction must lie in [0, 1)")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier threshold must be positive")

    @property
    def K(self):
        w, h = self.image_size
        return np.array([[self.focal, 0.0, w / 2.0], [0.0, self.focal, h / 2.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class ValidationConfig:
    inlier_threshold: float = 3.0
    min_inliers: int = 10
    max_rotation_error_deg: float = 3.0
    max_translation_error_deg: float = 3.0

    def __post_init__(self):
        if self.inlier_threshold <= 0 or self.min_inliers < 1:
            raise ValueError("validation thresholds must be positive")
        if self.max_rotation_error_deg <= 0 or self.max_translation_error_deg <= 0:
            raise ValueError("pose error gates must be positive")


@dataclass
class TestCase:
    """One image pair restricted to a single ground-truth homography."""

    __test__ = False  # not a pytest class

    correspondences: Correspondences
    gt_homography: np.ndarray
    gt_pose: Pose
    K1: np.ndarray
    K2: np.ndarray
    scene_scale: float = 1.0
    inliers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    case_id: str = ""

    @property
    def homography_pixel(self):
        return pixel_homography(self.gt_homography, self.K1, self.K2)

    @property
    def n_inliers(self):
        return len(self.inliers)


@dataclass
class Scene:
    pose1: Pose
    pose2: Pose
    K: np.ndarray
    planes: list
    correspondences: Correspondences
    labels: np.ndarray  # generating plane per correspondence, -1 for outliers
    cases: list

    @property
    def relative(self):
        return relative_pose(self.pose1, self.pose2)


class ValidationResult(NamedTuple):
    accepted: bool
    reason: str
    n_inliers: int
    rotation_error_deg: float
    translation_error_deg: float


def project(K, X):
    x = X @ K.T
    return x[:, :2] / x[:, 2:3]


def _random_rotation(rng, max_deg):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * np.radians(rng.uniform(0.0, max_deg))).as_matrix()


def _look_at(center, target):
    z = target - center
    z /= np.linalg.norm(z)
    x = np.cross([0.0, 1.0, 0.0], z)
    x /= np.linalg.norm(x)
    return np.stack([x, np.cross(z, x), z])


def _random_plane(rng, cfg, K, region):
    w, h = cfg.image_size
    x0, x1 = region
    pix = np.array([rng.uniform(x0 + 0.3 * (x1 - x0), x1 - 0.3 * (x1 - x0)), rng.uniform(0.35 * h, 0.65 * h), 1.0])
    ray = np.linalg.solve(K, pix)
    P0 = ray / ray[2] * rng.uniform(*cfg.depth_range)
    facing = -P0 / np.linalg.norm(P0)
    tilt = _random_rotation(rng, cfg.tilt_max_deg)
    n = tilt @ facing
    return Plane3(n, -n @ P0), P0


def _sample_plane_points(rng, cfg, K, plane, rel, region, count):
    w, h = cfg.image_size
    Kinv = np.linalg.inv(K)
    got = []
    for _ in range(50):
        pix = np.column_stack([rng.uniform(*region, size=4 * count), rng.uniform(0, h, size=4 * count), np.ones(4 * count)])
        rays = pix @ Kinv.T
        denom = rays @ plane.normal
        with np.errstate(divide="ignore"):
            lam = -plane.d / denom
        X = rays * lam[:, None]
        X2 = X @ rel.rotation.T + rel.translation
        ok = (lam > 0) & (X2[:, 2] > 0.1)
        x2 = project(K, X2[ok])
        inside = (x2[:, 0] >= 0) & (x2[:, 0] < w) & (x2[:, 1] >= 0) & (x2[:, 1] < h)
        got.append(X[ok][inside])
        if sum(len(g) for g in got) >= count:
            return np.vstack(got)[:count]
    return None


def _try_generate(rng, cfg):
    K = cfg.K
    w, h = cfg.image_size
    regions = [(w * j / cfg.n_planes, w * (j + 1) / cfg.n_planes) for j in range(cfg.n_planes)]
    planes, anchors = zip(*[_random_plane(rng, cfg, K, r) for r in regions])
    target = np.mean(anchors, axis=0)

    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    C2 = direction * rng.uniform(*cfg.baseline_range)
    R_rel = _random_rotation(rng, cfg.rotation_max_deg) @ _look_at(C2, target)
    rel = Pose(R_rel, -R_rel @ C2)

    for plane, anchor in zip(planes, anchors):
        # both centers on the visible side, camera 2 not grazing the plane
        if plane.distance(C2) <= 0:
            return None
        to_cam = C2 - anchor
        if plane.normal @ to_cam / np.linalg.norm(to_cam) < np.cos(np.radians(75.0)):
            return None

    pts3d = []
    for plane, region in zip(planes, regions):
        X = _sample_plane_points(rng, cfg, K, plane, rel, region, cfg.points_per_plane)
        if X is None:
            return None
        pts3d.append(X)
    return K, list(planes), rel, pts3d


def _keypoint_attributes(rng, cfg, H_pix, x1_true):
    n = len(x1_true)
    lo, hi = np.log(cfg.keypoint_scale_range[0]), np.log(cfg.keypoint_scale_range[1])
    phi1 = rng.uniform(0.0, 2 * np.pi, size=n)
    s1 = np.exp(rng.uniform(lo, hi, size=n))
    A = local_affinities(H_pix, x1_true)
    d = np.stack([np.cos(phi1), np.sin(phi1)], axis=1)
    Ad = np.einsum("nij,nj->ni", A, d)
    phi2 = np.arctan2(Ad[:, 1], Ad[:, 0]) + rng.normal(0.0, np.radians(cfg.angle_noise_deg), size=n)
    det = np.abs(np.linalg.det(A))
    s2 = s1 * np.sqrt(det) * np.exp(rng.normal(0.0, cfg.scale_log_noise, size=n))
    return np.mod(phi1, 2 * np.pi), s1, np.mod(phi2, 2 * np.pi), s2


def generate_scene(config: SceneConfig = SceneConfig()) -> Scene:
    """Random two-camera scene with ``n_planes`` planes and one test case per plane."""
    rng = np.random.default_rng(config.seed)
    for _ in range(config.max_retries):
        out = _try_generate(rng, config)
        if out is not None:
            break
    else:
        raise SceneGenerationError(f"no feasible geometry after {config.max_retries} attempts")
    K, planes, rel, pts3d = out
    w, h = config.image_size

    R1 = Rotation.random(random_state=rng).as_matrix()
    pose1 = Pose(R1, rng.uniform(-5.0, 5.0, size=3))
    pose2 = Pose(rel.rotation @ R1, rel.rotation @ pose1.translation + rel.translation)

    rows, labels, homographies = [], [], []
    for j, (plane, X) in enumerate(zip(planes, pts3d)):
        Hn = homography_from_plane(rel, plane)
        H_pix = pixel_homography(Hn, K, K)
        homographies.append(Hn)
        x1 = project(K, X)
        x2 = project(K, X @ rel.rotation.T + rel.translation)
        phi1, s1, phi2, s2 = _keypoint_attributes(rng, config, H_pix, x1)
        x1n = x1 + rng.normal(0.0, config.noise_sigma, size=x1.shape)
        x2n = x2 + rng.normal(0.0, config.noise_sigma, size=x2.shape)
        snn = rng.beta(2.0, 5.0, size=len(X))
        cols = [x1n[:, 0], x1n[:, 1], phi1, s1, x2n[:, 0], x2n[:, 1], phi2, s2, snn]
        if config.with_scores:
            cols.append(rng.beta(5.0, 2.0, size=len(X)))
        rows.append(np.column_stack(cols))
        labels.append(np.full(len(X), j))

    n_in = sum(len(X) for X in pts3d)
    n_out = int(round(config.outlier_fraction / (1.0 - config.outlier_fraction) * n_in))
    if n_out:
        lo, hi = np.log(config.keypoint_scale_range[0]), np.log(config.keypoint_scale_range[1])
        cols = [
            rng.uniform(0, w, n_out), rng.uniform(0, h, n_out),
            rng.uniform(0, 2 * np.pi, n_out), np.exp(rng.uniform(lo, hi, n_out)),
            rng.uniform(0, w, n_out), rng.uniform(0, h, n_out),
            rng.uniform(0, 2 * np.pi, n_out), np.exp(rng.uniform(lo, hi, n_out)),
            rng.beta(5.0, 2.0, n_out),
        ]
        if config.with_scores:
            cols.append(rng.beta(2.0, 5.0, n_out))
        rows.append(np.column_stack(cols))
        labels.append(np.full(n_out, -1))

    data = np.vstack(rows)
    labels = np.concatenate(labels)
    perm = rng.permutation(len(data))
    corrs = Correspondences(data[perm])
    labels = labels[perm]

    inlier_sets = [
        np.flatnonzero(forward_residuals(pixel_homography(Hn, K, K), corrs.pts1, corrs.pts2) <= config.inlier_threshold)
        for Hn in homographies
    ]
    cases = []
    for j, keep in enumerate(split_test_cases(len(corrs), inlier_sets)):
        sub = corrs.subset(keep)
        H_pix = pixel_homography(homographies[j], K, K)
        inl = np.flatnonzero(forward_residuals(H_pix, sub.pts1, sub.pts2) <= config.inlier_threshold)
        cases.append(TestCase(sub, homographies[j], rel, K.copy(), K.copy(), 1.0, inl, f"{config.seed}-{j}"))
    return Scene(pose1, pose2, K, planes, corrs, labels, cases)


def split_test_cases(n, inlier_sets):
    """Index sets of the single-homography cases of a pair with ``k`` homographies.

    Case ``j`` keeps every correspondence except the inliers that belong to
    other homographies only; correspondences shared with homography ``j``
    stay.
    """
    sets = [set(np.asarray(s, dtype=int).tolist()) for s in inlier_sets]
    out = []
    for j, own in enumerate(sets):
        foreign = set().union(*(s for k, s in enumerate(sets) if k != j)) - own
        out.append(np.array(sorted(set(range(n)) - foreign), dtype=int))
    return out


def best_decomposition(H_norm, gt_pose: Pose, points1=None):
    """Decomposition candidate closest to ``gt_pose``: ``(candidate, rot_err, trans_err)``."""
    best = None
    for cand in decompose_homography(H_norm, points1):
        er = rotation_error(gt_pose.rotation, cand.rotation)
        if cand.normal is None or np.linalg.norm(gt_pose.translation) == 0:
            et = 0.0 if np.linalg.norm(gt_pose.translation) == 0 and cand.normal is None else np.inf
        else:
            et = translation_angle_error(gt_pose.translation, cand.translation)
        if best is None or max(er, et) < max(best[1], best[2]):
            best = (cand, er, et)
    return best


def validate_homography(case: TestCase, vcfg: ValidationConfig = ValidationConfig()) -> ValidationResult:
    """Check that the case's homography is recoverable from its own inliers."""
    H_pix = case.homography_pixel
    c = case.correspondences
    inl = forward_residuals(H_pix, c.pts1, c.pts2) <= vcfg.inlier_threshold
    n_inl = int(inl.sum())
    if n_inl < vcfg.min_inliers:
        return ValidationResult(False, "too few inliers", n_inl, np.inf, np.inf)
    try:
        H_est = dlt(c.pts1[inl], c.pts2[inl])
    except DegenerateConfigurationError:
        return ValidationResult(False, "degenerate", n_inl, np.inf, np.inf)
    _, er, et = best_decomposition(calibrate_homography(H_est, case.K1, case.K2), case.gt_pose)
    if er > vcfg.max_rotation_error_deg or et > vcfg.max_translation_error_deg:
        return ValidationResult(False, "pose inconsistent", n_inl, er, et)
    return ValidationResult(True, "accepted", n_inl, er, et)


class ExtractedPlane(NamedTuple):
    plane: Plane3
    support: np.ndarray


def _fit_plane(X):
    c = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - c)
    n = Vt[-1]
    return Plane3(n, -n @ c)


def extract_planes(points3d, threshold, min_points, iterations=500, seed=0):
    """Sequential RANSAC plane extraction from a 3D point cloud.

    Repeatedly fits the best-supported plane from 3-point samples, refines it
    by least squares on its inliers, removes the support and continues while
    a plane has at least ``min_points`` points.
    """
    X = np.asarray(points3d, dtype=float).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    remaining = np.arange(len(X))
    out = []
    while len(remaining) >= max(min_points, 3):
        P = X[remaining]
        best = None
        for _ in range(iterations):
            a, b, c = P[rng.choice(len(P), 3, replace=False)]
            n = np.cross(b - a, c - a)
            if np.linalg.norm(n) < 1e-12:
                continue
            n /= np.linalg.norm(n)
            support = np.abs((P - a) @ n) <= threshold
            if best is None or support.sum() > best.sum():
                best = support
        if best is None or best.sum() < min_points:
            break
        plane = _fit_plane(P[best])
        support = np.abs(plane.distance(P)) <= threshold
        if support.sum() < min_points:
            break
        out.append(ExtractedPlane(plane, remaining[support]))
        remaining = remaining[~support]
    return out


@dataclass(frozen=True)
class SlopedPlaneConfig:
    z0: float
    z_x: float = 0.0
    z_y: float = 0.0

    def __post_init__(self):
        if self.z0 <= 0:
            raise ValueError("plane distance Z0 must be positive")


def slope_affinity(cfg: SlopedPlaneConfig) -> np.ndarray:
    """Affinity induced by a sloped plane seen by a stereo pair in normal position."""
    return np.array([[1.0 + cfg.z_x / cfg.z0, cfg.z_y / cfg.z0], [0.0, 1.0]])


def cond_closed_form(s, a):
    """Condition number of ``[[1 + s, a], [0, 1]]`` in closed form."""
    t = np.hypot(a, s)
    return 1.0 + (np.sqrt(4.0 * (1.0 + s) + t * t) + t) / (2.0 * (1.0 + s)) * t


def cond_approx(A):
    """``(exact condition number, 1 + sqrt(a^2 + s^2))`` for an upper-triangular slope affinity."""
    A = np.asarray(A, dtype=float)
    sv = np.linalg.svd(A, compute_uv=False)
    s, a = A[0, 0] - 1.0, A[0, 1]
    return float(sv[0] / sv[-1]), float(1.0 + np.hypot(a, s))
