"""Projective and Euclidean two-view geometry around plane-induced homographies.

Conventions
-----------
* A camera pose maps world to camera coordinates: ``X_cam = R @ X + t``.
* A plane ``(n, d)`` is the set ``n . X + d = 0`` expressed in the first
  camera frame, with ``|n| = 1``.
* Homographies map image-1 points to image-2 points and are kept with unit
  Frobenius norm and their largest-magnitude entry positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

W_EPS = 1e-12
RANK_TOL = 1e-9
PURE_ROTATION_TOL = 1e-6


class GeometryError(ValueError):
    pass


class PointAtInfinityError(GeometryError):
    pass


class DegenerateConfigurationError(GeometryError):
    pass


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise GeometryError("translation must be finite")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def center(self):
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class Plane3:
    normal: np.ndarray
    d: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise GeometryError("plane normal must be nonzero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "d", float(self.d) / norm)

    def distance(self, points):
        return np.asarray(points, dtype=float) @ self.normal + self.d


class HomographyDecomposition(NamedTuple):
    rotation: np.ndarray
    translation: np.ndarray
    normal: np.ndarray | None


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot2(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def normalize_homography(H):
    """Scale ``H`` to unit Frobenius norm with its largest-magnitude entry positive."""
    H = np.asarray(H, dtype=float).reshape(3, 3)
    norm = np.linalg.norm(H)
    if norm == 0 or not np.isfinite(norm):
        raise GeometryError("cannot normalize a zero or non-finite homography")
    H = H / norm
    if H.flat[np.argmax(np.abs(H))] < 0:
        H = -H
    return H


def relative_pose(pose1: Pose, pose2: Pose) -> Pose:
    R = pose2.rotation @ pose1.rotation.T
    t = pose2.translation - R @ pose1.translation
    return Pose(R, t)


def homography_from_plane(rel: Pose, plane: Plane3) -> np.ndarray:
    """Homography induced by ``plane`` between normalized image coordinates."""
    if plane.d == 0:
        raise DegenerateConfigurationError("plane passes through the first camera center (d = 0)")
    H = rel.rotation - np.outer(rel.translation, plane.normal) / plane.d
    return normalize_homography(H)


def _homogeneous_transfer(H, pts):
    pts = np.asarray(pts, dtype=float)
    q = pts @ H[:, :2].T + H[:, 2]
    return q[..., :2], q[..., 2]


def transfer(H, p):
    """Map points ``p`` (shape ``(2,)`` or ``(N, 2)``) through ``H``."""
    H = np.asarray(H, dtype=float)
    xy, w = _homogeneous_transfer(H, p)
    if np.any(np.abs(w) <= W_EPS):
        raise PointAtInfinityError("point maps to the line at infinity")
    return xy / w[..., None]


def transfer_or_inf(H, p):
    """Like :func:`transfer` but maps points at infinity to ``inf`` instead of raising."""
    xy, w = _homogeneous_transfer(np.asarray(H, dtype=float), p)
    bad = np.abs(w) <= W_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        out = xy / np.where(bad, 1.0, w)[..., None]
    out[bad] = np.inf
    return out


def reproj_error(H, pts1, pts2):
    """One-sided error ``|x' - H(x)|`` measured in the second image."""
    return np.linalg.norm(np.asarray(pts2, dtype=float) - transfer(H, pts1), axis=-1)


def sym_transfer_error(H, pts1, pts2):
    """``sqrt(|x' - H(x)|^2 + |x - H^-1(x')|^2)``."""
    pts1 = np.asarray(pts1, dtype=float)
    pts2 = np.asarray(pts2, dtype=float)
    fwd = np.sum((pts2 - transfer(H, pts1)) ** 2, axis=-1)
    bwd = np.sum((pts1 - transfer(np.linalg.inv(H), pts2)) ** 2, axis=-1)
    return np.sqrt(fwd + bwd)


def hartley_normalization(pts):
    """Similarity moving the centroid to the origin with mean distance sqrt(2)."""
    pts = np.asarray(pts, dtype=float)
    c = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - c, axis=1))
    if mean_dist <= 0 or not np.isfinite(mean_dist):
        raise DegenerateConfigurationError("points are coincident")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _apply_similarity(T, pts):
    return pts * T[0, 0] + T[:2, 2]


def _dlt_rows(p1, p2):
    n = len(p1)
    x, y = p1[:, 0], p1[:, 1]
    u, v = p2[:, 0], p2[:, 1]
    one, zero = np.ones(n), np.zeros(n)
    A = np.empty((2 * n, 9))
    A[0::2] = np.column_stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u])
    A[1::2] = np.column_stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v])
    return A


def _has_collinear_triple(pts, tol=1e-9):
    # pts are Hartley-normalized so an absolute area tolerance is meaningful
    for i in range(4):
        a, b, c = np.delete(pts, i, axis=0)
        area = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        if area < tol:
            return True
    return False


def dlt(pts1, pts2, weights=None) -> np.ndarray:
    """Hartley-normalized direct linear transform from ``>= 4`` point pairs.

    ``weights`` scales the two equations of each pair, giving a weighted
    algebraic least-squares fit.  Raises :class:`DegenerateConfigurationError`
    when the design matrix has effective rank below 8.
    """
    pts1 = np.asarray(pts1, dtype=float).reshape(-1, 2)
    pts2 = np.asarray(pts2, dtype=float).reshape(-1, 2)
    if len(pts1) != len(pts2):
        raise ValueError("point arrays differ in length")
    if len(pts1) < 4:
        raise DegenerateConfigurationError("at least 4 correspondences are required")
    T1 = hartley_normalization(pts1)
    T2 = hartley_normalization(pts2)
    p1 = _apply_similarity(T1, pts1)
    p2 = _apply_similarity(T2, pts2)
    if len(p1) == 4 and (_has_collinear_triple(p1) or _has_collinear_triple(p2)):
        raise DegenerateConfigurationError("three of the four points are collinear")
    A = _dlt_rows(p1, p2)
    if weights is not None:
        w = np.asarray(weights, dtype=float).reshape(-1)
        A = A * np.repeat(w, 2)[:, None]
    _, s, Vt = np.linalg.svd(A)
    if len(s) < 8 or s[7] <= RANK_TOL * s[0]:
        raise DegenerateConfigurationError("design matrix is rank deficient")
    Hn = Vt[-1].reshape(3, 3)
    return normalize_homography(np.linalg.inv(T2) @ Hn @ T1)


def _to_so3(M):
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def decompose_homography(H, points1=None) -> list[HomographyDecomposition]:
    """Split a calibrated homography into ``(R, t, n)`` candidates.

    Uses the SVD construction of Ma, Soatto, Kosecka and Sastry, returning
    the four solutions of ``H ~ R + t n^T`` with ``t`` scaled by the inverse
    plane distance.  For a pure rotation a single ``(R, 0, None)`` is
    returned.  When normalized homogeneous ``points1`` (or 2D normalized
    points) are given, candidates placing them behind the first camera are
    dropped.
    """
    H = np.asarray(H, dtype=float).reshape(3, 3)
    sv = np.linalg.svd(H, compute_uv=False)
    Hl = H / sv[1]
    if np.linalg.det(Hl) < 0:
        Hl = -Hl
    s1, _, s3 = sv / sv[1]
    if s1 - s3 < PURE_ROTATION_TOL:
        return [HomographyDecomposition(_to_so3(Hl), np.zeros(3), None)]

    _, S, Vt = np.linalg.svd(Hl)
    V = Vt.T
    if np.linalg.det(V) < 0:
        V = -V
    v1, v2, v3 = V.T
    s1sq, s3sq = S[0] ** 2, S[2] ** 2
    a = np.sqrt(max(1.0 - s3sq, 0.0))
    b = np.sqrt(max(s1sq - 1.0, 0.0))
    denom = np.sqrt(s1sq - s3sq)
    u1 = (a * v1 + b * v3) / denom
    u2 = (a * v1 - b * v3) / denom

    out = []
    for u in (u1, u2):
        U = np.column_stack([v2, u, np.cross(v2, u)])
        Hv2, Hu = Hl @ v2, Hl @ u
        W = np.column_stack([Hv2, Hu, np.cross(Hv2, Hu)])
        R = W @ U.T
        n = np.cross(v2, u)
        t = (Hl - R) @ n
        out.append(HomographyDecomposition(R, t, n))
        out.append(HomographyDecomposition(R, -t, -n))

    if points1 is not None:
        p = np.asarray(points1, dtype=float)
        if p.shape[-1] == 2:
            p = np.column_stack([p, np.ones(len(p))])
        out = [c for c in out if np.all(p @ c.normal > 0)]
    return out


def local_affinity(H, p) -> np.ndarray:
    """Jacobian of the dehomogenized map ``x -> H(x)`` at ``p``."""
    H = np.asarray(H, dtype=float)
    p = np.asarray(p, dtype=float)
    w = H[2, 0] * p[0] + H[2, 1] * p[1] + H[2, 2]
    if abs(w) <= W_EPS:
        raise PointAtInfinityError("point maps to the line at infinity")
    q = transfer(H, p)
    return (H[:2, :2] - np.outer(q, H[2, :2])) / w


def local_affinities(H, pts) -> np.ndarray:
    """Vectorized :func:`local_affinity` for ``(N, 2)`` points, returns ``(N, 2, 2)``."""
    H = np.asarray(H, dtype=float)
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    q = transfer(H, pts)
    w = pts @ H[2, :2] + H[2, 2]
    return (H[:2, :2][None] - q[:, :, None] * H[2, :2][None, None, :]) / w[:, None, None]


def affinity_from_sift(phi1, s1, phi2, s2) -> np.ndarray:
    """Local affinity ``J2 J1^-1`` of two oriented, scaled keypoints.

    Scalar arguments give a ``(2, 2)`` matrix, arrays give ``(N, 2, 2)``.
    """
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise GeometryError("keypoint scales must be positive")
    da = np.asarray(phi2, dtype=float) - np.asarray(phi1, dtype=float)
    k = s2 / s1
    c, s = k * np.cos(da), k * np.sin(da)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def calibrate_homography(H_pixel, K1, K2):
    """Pixel homography to normalized-coordinate homography ``K2^-1 H K1``."""
    return normalize_homography(np.linalg.inv(K2) @ H_pixel @ K1)


def pixel_homography(H_norm, K1, K2):
    return normalize_homography(K2 @ H_norm @ np.linalg.inv(K1))
