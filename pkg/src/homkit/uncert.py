"""Keypoint uncertainty statistics against reference homographies.

Positional, scale and orientation residuals of keypoint pairs, the local
rotation of an affinity by QR, SVD and matrix logarithm, and a mergeable
accumulator for dataset-scale statistics.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from homkit.correspondences import Correspondence, Correspondences
from homkit.geom import GeometryError, local_affinities, local_affinity, transfer

# exponential-coordinate generators: scale, rotation, and the two shears
GENERATORS = np.array(
    [
        [[1.0, 0.0], [0.0, 1.0]],
        [[0.0, -1.0], [1.0, 0.0]],
        [[0.0, 1.0], [1.0, 0.0]],
        [[1.0, 0.0], [0.0, -1.0]],
    ]
)
METHODS = ("direct", "qr_A", "qr_AT", "svd", "exp")


def wrap_angle(a):
    """Map angles to ``[-pi, pi)``."""
    return np.mod(np.asarray(a) + np.pi, 2 * np.pi) - np.pi


def _direction(phi):
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1)


def positional_residual(c: Correspondence, H) -> float:
    """Symmetric transfer residual ``sqrt((|x' - H x|^2 + |x - H^-1 x'|^2) / 8)``."""
    x, xp = np.array([c.x1, c.y1]), np.array([c.x2, c.y2])
    fwd = xp - transfer(H, x)
    bwd = x - transfer(np.linalg.inv(H), xp)
    return float(np.sqrt((fwd @ fwd + bwd @ bwd) / 8.0))


def angular_residual_direct(c: Correspondence, A) -> float:
    """Signed angle from the predicted direction ``A d(phi)`` to the observed ``d(phi')``.

    Positive when the observed orientation is rotated counter-clockwise from
    the prediction; ``abs`` of the result is the unsigned angle.
    """
    pred = np.asarray(A, dtype=float) @ _direction(c.phi1)
    obs = _direction(c.phi2)
    return float(np.arctan2(pred[0] * obs[1] - pred[1] * obs[0], pred @ obs))


def logm2(A):
    """Real logarithm of 2x2 matrices ``(..., 2, 2)``; returns ``(B, valid)``.

    Closed form via ``A = sqrt(det) * exp(N theta / sin theta)`` with ``N`` the
    traceless part of the unit-determinant matrix.  ``valid`` is False where
    no real principal logarithm exists (``det <= 0`` or an eigenvalue on the
    closed negative real axis).
    """
    A = np.asarray(A, dtype=float)
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    valid = det > 0
    sd = np.sqrt(np.where(valid, det, 1.0))
    Ah = A / sd[..., None, None]
    c = 0.5 * (Ah[..., 0, 0] + Ah[..., 1, 1])
    valid &= c > -1.0
    N = Ah - c[..., None, None] * np.eye(2)
    q = -(N[..., 0, 0] * N[..., 1, 1] - N[..., 0, 1] * N[..., 1, 0])  # N @ N = q I
    with np.errstate(invalid="ignore", divide="ignore"):
        # elliptic (q < 0): theta = atan2(sqrt(-q), c), factor theta / sin theta
        ell = np.arctan2(np.sqrt(np.maximum(-q, 0.0)), c) / np.sqrt(np.maximum(-q, 1e-300))
        # hyperbolic (q > 0): sinh theta = sqrt(q), factor theta / sinh theta
        hyp = np.arcsinh(np.sqrt(np.maximum(q, 0.0))) / np.sqrt(np.maximum(q, 1e-300))
    small = np.abs(q) < 1e-14
    factor = np.where(small, 1.0 - q / 6.0, np.where(q < 0, ell, hyp))
    factor = np.where(valid, factor, np.nan)
    B = np.log(sd)[..., None, None] * np.eye(2) + factor[..., None, None] * N
    return B, valid


def expm2(B):
    """Matrix exponential of 2x2 matrices ``(..., 2, 2)`` in closed form."""
    B = np.asarray(B, dtype=float)
    m = 0.5 * (B[..., 0, 0] + B[..., 1, 1])
    N = B - m[..., None, None] * np.eye(2)
    q = -(N[..., 0, 0] * N[..., 1, 1] - N[..., 0, 1] * N[..., 1, 0])
    r = np.sqrt(np.abs(q))
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_part = np.where(q < 0, np.cos(r), np.cosh(r))
        sin_part = np.where(q < 0, np.sin(r), np.sinh(r)) / r
    sin_part = np.where(r < 1e-8, 1.0 + q / 6.0, sin_part)
    E = cos_part[..., None, None] * np.eye(2) + sin_part[..., None, None] * N
    return np.exp(m)[..., None, None] * E


def exp_coordinates(B):
    """``(p1, p2, p3, p4)`` with ``B = sum p_k G_k`` for the scale/rotation/shear generators."""
    B = np.asarray(B, dtype=float)
    return np.stack(
        [
            0.5 * (B[..., 0, 0] + B[..., 1, 1]),
            0.5 * (B[..., 1, 0] - B[..., 0, 1]),
            0.5 * (B[..., 0, 1] + B[..., 1, 0]),
            0.5 * (B[..., 0, 0] - B[..., 1, 1]),
        ],
        axis=-1,
    )


def reconstruct_affine(p):
    """Inverse of the exponential decomposition: ``exp(sum p_k G_k)``."""
    return expm2(np.tensordot(np.asarray(p, dtype=float), GENERATORS, axes=([-1], [0])))


def _qr_positive(M):
    Q, R = np.linalg.qr(M)
    S = np.diag(np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R))))
    return Q @ S, S @ R


@dataclass(frozen=True)
class AffineDecomposition:
    p1: float
    p2: float
    p3: float
    p4: float
    alpha_qr_A: float
    alpha_qr_AT: float
    alpha_svd: float
    shear_sq: float
    cond: float
    exp_valid: bool = True

    @property
    def alpha_exp(self):
        return self.p2


def decompose_affine(A) -> AffineDecomposition:
    """Rotation, scale and shear content of a nonsingular 2x2 affinity.

    QR factors have positive diagonals.  If no real logarithm exists the
    exponential coordinates are NaN and ``exp_valid`` is False.
    """
    A = np.asarray(A, dtype=float)
    if abs(np.linalg.det(A)) < 1e-300:
        raise GeometryError("affinity is singular")
    Q, _ = _qr_positive(A)
    Qt, _ = _qr_positive(A.T)
    U, sv, Vt = np.linalg.svd(A)
    Rs = U @ Vt
    B, valid = logm2(A)
    p = exp_coordinates(B)
    return AffineDecomposition(
        p1=float(p[0]),
        p2=float(p[1]),
        p3=float(p[2]),
        p4=float(p[3]),
        alpha_qr_A=float(np.arctan2(Q[1, 0], Q[0, 0])),
        alpha_qr_AT=float(np.arctan2(Qt[0, 1], Qt[0, 0])),  # angle of Qt.T
        alpha_svd=float(np.arctan2(Rs[1, 0], Rs[0, 0])),
        shear_sq=float(p[2] ** 2 + p[3] ** 2),
        cond=float(sv[0] / sv[1]),
        exp_valid=bool(valid),
    )


def rotation_angles(A):
    """Batched ``{method: angle}`` for ``(N, 2, 2)`` affinities with positive determinant.

    Closed forms of the QR and SVD rotations; the SVD rotation equals the
    polar factor, whose angle is ``atan2(c - b, a + d)``.
    """
    A = np.asarray(A, dtype=float)
    a, b, c, d = A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1]
    B, _ = logm2(A)
    return {
        "qr_A": np.arctan2(c, a),
        "qr_AT": -np.arctan2(b, a),
        "svd": np.arctan2(c - b, a + d),
        "exp": exp_coordinates(B)[..., 1],
    }


def scale_stats(c: Correspondence, A):
    """``(r, r_ref, delta_r, rho)`` with ``rho = log(delta_r) / r_ref``."""
    det = float(np.linalg.det(A))
    if det <= 0:
        raise GeometryError("scale statistics need a positive affinity determinant")
    r = c.s2 / c.s1
    r_ref = math.sqrt(det)
    dr = r / r_ref
    return r, r_ref, dr, math.log(dr) / r_ref


def condition_numbers(A):
    sv = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return sv[..., 0] / sv[..., -1]


@dataclass
class KeypointResiduals:
    """Column-wise residuals of a batch of keypoint pairs."""

    eps_x: np.ndarray
    delta_alpha: dict
    r: np.ndarray
    r_ref: np.ndarray
    delta_r: np.ndarray
    rho: np.ndarray
    cond: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def __len__(self):
        return len(self.eps_x)

    def select(self, mask):
        return KeypointResiduals(
            self.eps_x[mask],
            {k: v[mask] for k, v in self.delta_alpha.items()},
            self.r[mask], self.r_ref[mask], self.delta_r[mask], self.rho[mask],
            self.cond[mask], self.s1[mask], self.s2[mask],
        )


def compute_residuals(corrs: Correspondences, H) -> KeypointResiduals:
    """Residuals of every correspondence against the reference homography ``H``.

    Angular residuals are observed minus predicted rotation, wrapped to
    ``[-pi, pi)``; ``direct`` compares the direction vectors.
    """
    H = np.asarray(H, dtype=float)
    x1, x2 = corrs.pts1, corrs.pts2
    Hinv = np.linalg.inv(H)
    fwd = x2 - transfer(H, x1)
    bwd = x1 - transfer(Hinv, x2)
    eps = np.sqrt((np.sum(fwd**2, axis=1) + np.sum(bwd**2, axis=1)) / 8.0)

    A = local_affinities(H, x1)
    det = np.linalg.det(A)
    pred = np.einsum("nij,nj->ni", A, _direction(corrs.phi1))
    obs = _direction(corrs.phi2)
    direct = np.arctan2(pred[:, 0] * obs[:, 1] - pred[:, 1] * obs[:, 0], np.sum(pred * obs, axis=1))
    observed = corrs.phi2 - corrs.phi1
    delta = {"direct": direct}
    for k, ang in rotation_angles(A).items():
        delta[k] = wrap_angle(observed - ang)

    r = corrs.s2 / corrs.s1
    with np.errstate(invalid="ignore", divide="ignore"):
        r_ref = np.sqrt(np.where(det > 0, det, np.nan))
        dr = r / r_ref
        rho = np.log(dr) / r_ref
    return KeypointResiduals(eps, delta, r, r_ref, dr, rho, condition_numbers(A), corrs.s1.copy(), corrs.s2.copy())


def affinity_at(H, c: Correspondence):
    return local_affinity(H, np.array([c.x1, c.y1]))


# ---------------------------------------------------------------------------
# accumulation


@dataclass(frozen=True)
class Histogram:
    lo: float
    width: float
    n_bins: int

    def edges(self):
        return self.lo + self.width * np.arange(self.n_bins + 1)

    def index(self, values):
        return np.floor((np.asarray(values) - self.lo) / self.width).astype(np.int64)


ANGLE_HIST = Histogram(-180.0, 1.0, 360)
RHO_HIST = Histogram(-2.0, 0.05, 80)
EPS_HIST = Histogram(0.0, 0.1, 100)
SCALE_BIN_EDGES = np.array([0.0, 2.0, 4.0, 8.0, 16.0, 32.0, np.inf])


@dataclass(frozen=True)
class StatsFilter:
    cond_max: float = 1.5
    r_ref_range: tuple = (0.5, 2.0)

    def mask(self, res: KeypointResiduals):
        lo, hi = self.r_ref_range
        return (res.cond <= self.cond_max) & (res.r_ref >= lo) & (res.r_ref <= hi)


class RunningMoments:
    """Count, mean and centered second moment with an associative merge."""

    __slots__ = ("n", "mean", "m2")

    def __init__(self, n=0, mean=0.0, m2=0.0):
        self.n, self.mean, self.m2 = int(n), float(mean), float(m2)

    def add(self, x):
        x = np.asarray(x, dtype=float)
        x = x[np.isfinite(x)]
        if len(x):
            self.merge(RunningMoments(len(x), x.mean(), ((x - x.mean()) ** 2).sum()))
        return self

    def merge(self, other):
        n = self.n + other.n
        if n == 0:
            return self
        delta = other.mean - self.mean
        self.mean += delta * other.n / n
        self.m2 += other.m2 + delta * delta * self.n * other.n / n
        self.n = n
        return self

    @property
    def std(self):
        return math.sqrt(self.m2 / (self.n - 1)) if self.n > 1 else 0.0

    def to_dict(self):
        return {"count": self.n, "mean": self.mean, "std": self.std}


# statistic name -> (value extractor, histogram, unit scaling)
def _stat_fields():
    fields = {f"delta_alpha_{m}": (lambda res, m=m: np.degrees(res.delta_alpha[m]), ANGLE_HIST) for m in METHODS}
    fields["rho"] = (lambda res: res.rho, RHO_HIST)
    fields["delta_r"] = (lambda res: res.delta_r, None)
    fields["eps_x"] = (lambda res: res.eps_x, EPS_HIST)
    return fields


STAT_FIELDS = _stat_fields()


@dataclass
class UncertAccumulator:
    """Mergeable partial report over a stream of keypoint residual batches.

    Angular statistics are in degrees.  ``add`` applies the filter;
    ``merge`` combines partial reports in any order.
    """

    filt: StatsFilter = field(default_factory=StatsFilter)
    n_seen: int = 0
    moments: dict = field(default_factory=lambda: {k: RunningMoments() for k in STAT_FIELDS})
    hists: dict = field(
        default_factory=lambda: {k: np.zeros(h.n_bins + 2, dtype=np.int64) for k, (_, h) in STAT_FIELDS.items() if h}
    )
    # per (s bin, s' bin): [count, sum eps, sum eps^2]
    scale_bins: np.ndarray = field(default_factory=lambda: np.zeros((len(SCALE_BIN_EDGES) - 1,) * 2 + (3,)))

    @property
    def n_kept(self):
        return self.moments["eps_x"].n

    def add(self, res: KeypointResiduals):
        self.n_seen += len(res)
        res = res.select(self.filt.mask(res))
        for k, (get, hist) in STAT_FIELDS.items():
            v = get(res)
            self.moments[k].add(v)
            if hist is not None:
                v = v[np.isfinite(v)]
                idx = np.clip(hist.index(v) + 1, 0, hist.n_bins + 1)  # 0 and last are under/overflow
                self.hists[k] += np.bincount(idx, minlength=hist.n_bins + 2)
        i = np.searchsorted(SCALE_BIN_EDGES, res.s1, side="right") - 1
        j = np.searchsorted(SCALE_BIN_EDGES, res.s2, side="right") - 1
        np.add.at(self.scale_bins, (i, j, 0), 1.0)
        np.add.at(self.scale_bins, (i, j, 1), res.eps_x)
        np.add.at(self.scale_bins, (i, j, 2), res.eps_x**2)
        return self

    def merge(self, other: "UncertAccumulator"):
        if other.filt != self.filt:
            raise ValueError("cannot merge accumulators with different filters")
        self.n_seen += other.n_seen
        for k in self.moments:
            self.moments[k].merge(other.moments[k])
        for k in self.hists:
            self.hists[k] += other.hists[k]
        self.scale_bins += other.scale_bins
        return self

    def scale_binned_std(self):
        n, s, s2 = np.moveaxis(self.scale_bins, -1, 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            var = (s2 - s * s / n) / (n - 1)
        return np.where(n > 1, np.sqrt(np.maximum(var, 0.0)), np.nan), n

    def report(self):
        if self.n_kept == 0:
            raise ValueError("no residuals left after filtering")
        std, counts = self.scale_binned_std()
        return {
            "n_seen": self.n_seen,
            "n_kept": self.n_kept,
            "filter": {"cond_max": self.filt.cond_max, "r_ref_range": list(self.filt.r_ref_range)},
            "stats": {k: m.to_dict() for k, m in self.moments.items()},
            "eps_x_rms": math.sqrt(self.moments["eps_x"].m2 / self.n_kept + self.moments["eps_x"].mean ** 2),
            "histograms": {
                k: {"lo": STAT_FIELDS[k][1].lo, "width": STAT_FIELDS[k][1].width, "underflow": int(h[0]),
                    "overflow": int(h[-1]), "counts": h[1:-1].tolist()}
                for k, h in self.hists.items()
            },
            "eps_x_std_by_scale": {
                "edges": [float(e) for e in SCALE_BIN_EDGES],
                "std": [[None if not np.isfinite(v) else float(v) for v in row] for row in std],
                "count": counts.astype(int).tolist(),
            },
        }


def accumulate_stats(stream, filt: StatsFilter = StatsFilter()):
    """Report over an iterable of :class:`KeypointResiduals` batches."""
    acc = UncertAccumulator(filt)
    for res in stream:
        acc.add(res)
    return acc.report()


def write_report(report, out_dir):
    """Write ``uncert.json`` plus one CSV per histogram into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "uncert.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    for name, h in report["histograms"].items():
        with open(out / f"hist_{name}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for k, cnt in enumerate(h["counts"]):
                w.writerow([h["lo"] + k * h["width"], h["lo"] + (k + 1) * h["width"], cnt])
    return out
