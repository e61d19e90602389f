"""Covariance-aware homography estimation.

Algebraic and maximum-likelihood (Gauss-Helmert) estimates with their
8-dof covariance matrices, equal or scale-dependent point weighting, the
variance factor, loss metrics comparing covariances, and RMSE summaries.

All adjustment happens in Hartley-conditioned coordinates with spherically
normalized homogeneous vectors.  Covariances live in the 8-dim tangent
space of the unit-norm homography vector (row-major ``vec``); use
:meth:`FitReport.covariance_pixel` to express them for the pixel-frame
homography instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from homkit.correspondences import Correspondences
from homkit.geom import (
    DegenerateConfigurationError,
    hartley_normalization,
    normalize_homography,
    transfer,
)

MAX_ITERATIONS = 50
TOLERANCE = 1e-10


@dataclass(frozen=True)
class WeightScheme:
    """A-priori point precision.

    ``equal``: every coordinate has std ``sigma``.  ``scale``: a keypoint of
    scale ``s`` has std ``sigma * s / m`` (weight ``m^2 / s^2``), with ``m``
    the geometric mean of all scales of both images.
    """

    kind: str = "equal"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("equal", "scale"):
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def point_sigmas(self, corrs: Correspondences):
        n = len(corrs)
        if self.kind == "equal":
            return np.full(n, self.sigma), np.full(n, self.sigma)
        s = np.concatenate([corrs.s1, corrs.s2])
        m = math.exp(np.mean(np.log(s)))
        return self.sigma * corrs.s1 / m, self.sigma * corrs.s2 / m

    def weights(self, corrs: Correspondences):
        s1, s2 = self.point_sigmas(corrs)
        return (self.sigma / s1) ** 2, (self.sigma / s2) ** 2


def _null(x):
    """Orthonormal bases of the complements of unit rows ``x`` ``(..., d)`` -> ``(..., d, d-1)``."""
    _, _, Vt = np.linalg.svd(x[..., None, :])
    return np.swapaxes(Vt[..., 1:, :], -1, -2)


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _skew_batch(v):
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1], S[..., 0, 2] = -v[..., 2], v[..., 1]
    S[..., 1, 0], S[..., 1, 2] = v[..., 2], -v[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -v[..., 1], v[..., 0]
    return S


class _Problem:
    """Conditioned, spherically normalized observations with their covariances."""

    def __init__(self, pts1, pts2, sig1, sig2):
        self.pts1 = np.asarray(pts1, dtype=float)
        self.pts2 = np.asarray(pts2, dtype=float)
        self.n = len(self.pts1)
        self.T1 = hartley_normalization(self.pts1)
        self.T2 = hartley_normalization(self.pts2)
        self.l1, self.cov1 = self._observe(self.T1, self.pts1, sig1)
        self.l2, self.cov2 = self._observe(self.T2, self.pts2, sig2)

    @staticmethod
    def _observe(T, pts, sig):
        xe = np.column_stack([pts, np.ones(len(pts))]) @ T.T
        norm = np.linalg.norm(xe, axis=1)
        x = xe / norm[:, None]
        J = (np.eye(3) - x[:, :, None] * x[:, None, :]) / norm[:, None, None]
        var = (T[0, 0] * np.broadcast_to(sig, (len(pts),))) ** 2
        C = np.zeros((len(pts), 3, 3))
        C[:, 0, 0] = C[:, 1, 1] = var
        return x, J @ C @ np.swapaxes(J, 1, 2)

    def to_pixel_h(self, h):
        return np.linalg.inv(self.T2) @ h.reshape(3, 3) @ self.T1

    def to_pixel_points(self, y, T):
        p = y @ np.linalg.inv(T).T
        return p[:, :2] / p[:, 2:3]


@dataclass
class _Linearization:
    A: np.ndarray  # (I, 2, 8)
    Bt: np.ndarray  # (I, 2, 4)
    cov: np.ndarray  # (I, 4, 4) tangent observation covariance
    dl: np.ndarray  # (I, 4) observations in the tangent at the fitted points
    g0: np.ndarray  # (I, 2)
    Nh: np.ndarray  # (9, 8)
    N1: np.ndarray
    N2: np.ndarray

    @property
    def W(self):
        return np.linalg.inv(self.Bt @ self.cov @ np.swapaxes(self.Bt, 1, 2))

    def normal_matrix(self, W=None):
        W = self.W if W is None else W
        return np.einsum("nia,nij,njb->ab", self.A, W, self.A)


def _linearize(prob: _Problem, h, y1, y2, cov1=None, cov2=None) -> _Linearization:
    cov1 = prob.cov1 if cov1 is None else cov1
    cov2 = prob.cov2 if cov2 is None else cov2
    H = h.reshape(3, 3)
    Nh = _null(h)
    N1, N2 = _null(y1), _null(y2)
    P = np.swapaxes(N2, 1, 2)  # (I, 2, 3): basis of the plane orthogonal to y2
    S2 = _skew_batch(y2)
    Hy1 = y1 @ H.T
    PS2 = P @ S2
    g0 = np.einsum("nij,nj->ni", PS2, Hy1)
    K = np.zeros((prob.n, 3, 9))
    for r in range(3):
        K[:, r, 3 * r : 3 * r + 3] = y1
    A = PS2 @ K @ Nh
    B1 = PS2 @ H @ N1
    B2 = -P @ _skew_batch(Hy1) @ N2
    Bt = np.concatenate([B1, B2], axis=2)
    cov = np.zeros((prob.n, 4, 4))
    cov[:, :2, :2] = np.swapaxes(N1, 1, 2) @ cov1 @ N1
    cov[:, 2:, 2:] = np.swapaxes(N2, 1, 2) @ cov2 @ N2
    d1 = np.einsum("nij,ni->nj", N1, prob.l1) / np.sum(y1 * prob.l1, axis=1)[:, None]
    d2 = np.einsum("nij,ni->nj", N2, prob.l2) / np.sum(y2 * prob.l2, axis=1)[:, None]
    return _Linearization(A, Bt, cov, np.concatenate([d1, d2], axis=1), g0, Nh, N1, N2)


def _corrections(lin: _Linearization, dh, W=None):
    """Lagrange multipliers and observation corrections for a parameter step ``dh``."""
    W = lin.W if W is None else W
    w = lin.g0 + np.einsum("nij,nj->ni", lin.Bt, lin.dl)
    lam = np.einsum("nij,nj->ni", W, np.einsum("nia,a->ni", lin.A, dh) + w)
    v = -np.einsum("nij,nkj,nk->ni", lin.cov, lin.Bt, lam)
    omega = float(np.einsum("ni,nij,nj->", lam, np.linalg.inv(W), lam))
    return w, v, omega


@dataclass
class FitReport:
    homography: np.ndarray  # pixel frame, unit Frobenius norm
    covariance: np.ndarray  # 8x8, tangent of the conditioned unit vector
    variance_factor: float  # nan when the redundancy is zero
    redundancy: int
    omega: float
    residuals: np.ndarray  # (I, 4) pixel corrections of x and x'
    iterations: int
    converged: bool
    method: str
    h_cond: np.ndarray = field(repr=False, default=None)
    T1: np.ndarray = field(repr=False, default=None)
    T2: np.ndarray = field(repr=False, default=None)
    basis: np.ndarray = field(repr=False, default=None)  # 9x8 tangent basis of the covariance

    @property
    def sigma0(self):
        return math.sqrt(self.variance_factor) if self.variance_factor >= 0 else math.nan

    def pixel_jacobian(self):
        """Map from the conditioned tangent to the tangent of the pixel unit vector."""
        M = np.kron(np.linalg.inv(self.T2), self.T1.T)
        hp = M @ self.h_cond
        norm = np.linalg.norm(hp)
        hp_u = hp / norm
        if normalize_homography(hp.reshape(3, 3)).ravel() @ hp_u < 0:
            hp_u, M = -hp_u, -M
        Np = _null(hp_u)
        return Np.T @ (np.eye(9) - np.outer(hp_u, hp_u)) / norm @ M @ self.basis, Np

    def covariance_pixel(self):
        """``(Sigma, basis)``: covariance in the tangent of ``homography.ravel()`` and its 9x8 basis."""
        J, Np = self.pixel_jacobian()
        return J @ self.covariance @ J.T, Np

    def to_dict(self):
        return {
            "method": self.method,
            "homography": self.homography.tolist(),
            "covariance": self.covariance.tolist(),
            "variance_factor": None if math.isnan(self.variance_factor) else self.variance_factor,
            "redundancy": self.redundancy,
            "omega": self.omega,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _inputs(corrs, weights, sigmas):
    if not isinstance(corrs, Correspondences):
        corrs = Correspondences(corrs)
    if len(corrs) < 4:
        raise DegenerateConfigurationError("at least four correspondences are required")
    sig1, sig2 = sigmas if sigmas is not None else weights.point_sigmas(corrs)
    return corrs, _Problem(corrs.pts1, corrs.pts2, sig1, sig2)


def _algebraic_h(prob: _Problem):
    P = np.swapaxes(_null(prob.l2), 1, 2)
    K = np.zeros((prob.n, 3, 9))
    for r in range(3):
        K[:, r, 3 * r : 3 * r + 3] = prob.l1
    M = (P @ _skew_batch(prob.l2) @ K).reshape(-1, 9)
    _, s, Vt = np.linalg.svd(M)
    if s[7] <= 1e-9 * s[0]:
        raise DegenerateConfigurationError("constraint matrix is rank deficient")
    return Vt[-1]


def _report(prob, h, y1, y2, lin, cov, omega, v_tangent, iterations, converged, method):
    redundancy = 2 * prob.n - 8
    vf = omega / redundancy if redundancy > 0 else math.nan
    f1 = _unit(y1 + np.einsum("nij,nj->ni", lin.N1, lin.dl[:, :2] + v_tangent[:, :2]))
    f2 = _unit(y2 + np.einsum("nij,nj->ni", lin.N2, lin.dl[:, 2:] + v_tangent[:, 2:]))
    res = np.concatenate(
        [prob.to_pixel_points(f1, prob.T1) - prob.pts1, prob.to_pixel_points(f2, prob.T2) - prob.pts2], axis=1
    )
    return FitReport(
        homography=normalize_homography(prob.to_pixel_h(h)),
        covariance=0.5 * (cov + cov.T),
        variance_factor=vf,
        redundancy=redundancy,
        omega=omega,
        residuals=res,
        iterations=iterations,
        converged=converged,
        method=method,
        h_cond=h,
        T1=prob.T1,
        T2=prob.T2,
        basis=lin.Nh,
    )


def algebraic_covariance(lin: _Linearization, W=None):
    """Sandwich covariance ``(A'A)^-1 A' (B' S B) A (A'A)^-1`` of the algebraic estimate."""
    W = lin.W if W is None else W
    AtA_inv = np.linalg.inv(np.einsum("nia,nib->ab", lin.A, lin.A))
    mid = np.einsum("nia,nij,njb->ab", lin.A, np.linalg.inv(W), lin.A)
    return AtA_inv @ mid @ AtA_inv


def estimate_algebraic(corrs, weights: WeightScheme = WeightScheme(), sigmas=None) -> FitReport:
    """Algebraic estimate: smallest singular vector of the stacked reduced constraints.

    The covariance is the first-order sandwich propagation of the point
    covariances, linearized at the estimate and the observed points.  ``omega``
    is the Mahalanobis norm of the constraint residuals.
    """
    corrs, prob = _inputs(corrs, weights, sigmas)
    h = _algebraic_h(prob)
    lin = _linearize(prob, h, prob.l1, prob.l2)
    _, v, omega = _corrections(lin, np.zeros(8))
    return _report(prob, h, prob.l1, prob.l2, lin, algebraic_covariance(lin), omega, v, 0, True, "algebraic")


def _gauss_helmert(prob: _Problem, h0, max_iterations=MAX_ITERATIONS, tol=TOLERANCE):
    h = _unit(np.asarray(h0, dtype=float).ravel())
    y1, y2 = prob.l1.copy(), prob.l2.copy()
    converged = False
    it = 0
    while it < max_iterations:
        it += 1
        lin = _linearize(prob, h, y1, y2)
        W = lin.W
        Nm = lin.normal_matrix(W)
        w = lin.g0 + np.einsum("nij,nj->ni", lin.Bt, lin.dl)
        try:
            dh = -np.linalg.solve(Nm, np.einsum("nia,nij,nj->a", lin.A, W, w))
        except np.linalg.LinAlgError as exc:
            raise DegenerateConfigurationError("normal equations are singular") from exc
        _, v, _ = _corrections(lin, dh, W)
        dy = lin.dl + v
        h = _unit(h + lin.Nh @ dh)
        y1 = _unit(y1 + np.einsum("nij,nj->ni", lin.N1, dy[:, :2]))
        y2 = _unit(y2 + np.einsum("nij,nj->ni", lin.N2, dy[:, 2:]))
        if np.linalg.norm(dh) < tol:
            converged = True
            break
    lin = _linearize(prob, h, y1, y2)
    return h, y1, y2, lin, it, converged


def estimate_ml(corrs, weights: WeightScheme = WeightScheme(), h0=None, sigmas=None,
                max_iterations=MAX_ITERATIONS, tol=TOLERANCE) -> FitReport:
    """Maximum-likelihood estimate by iterated Gauss-Helmert adjustment.

    ``h0`` is an optional pixel-frame initial homography; the algebraic
    estimate is used otherwise.  Fitted points start at the observations.
    """
    corrs, prob = _inputs(corrs, weights, sigmas)
    if h0 is None:
        h_init = _algebraic_h(prob)
    else:
        h_init = (prob.T2 @ np.asarray(h0, dtype=float) @ np.linalg.inv(prob.T1)).ravel()
    h, y1, y2, lin, it, converged = _gauss_helmert(prob, h_init, max_iterations, tol)
    W = lin.W
    try:
        cov = np.linalg.inv(lin.normal_matrix(W))
    except np.linalg.LinAlgError as exc:
        raise DegenerateConfigurationError("normal matrix is singular") from exc
    _, v, omega = _corrections(lin, np.zeros(8), W)
    return _report(prob, h, y1, y2, lin, cov, omega, v, it, converged, f"ml_{weights.kind}")


def loss_metrics(sigma, sigma_ref):
    """``(l_mean, l_max)`` of covariance ``sigma`` against the reference ``sigma_ref``."""
    sigma = np.asarray(sigma, dtype=float)
    sigma_ref = np.asarray(sigma_ref, dtype=float)
    try:
        lam = eigh(0.5 * (sigma + sigma.T), 0.5 * (sigma_ref + sigma_ref.T), eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("reference covariance is not positive definite") from exc
    return math.sqrt(max(lam.sum(), 0.0) / len(lam)), math.sqrt(max(lam.max(), 0.0))


def _transfer_sq(corrs, H):
    H = np.asarray(H, dtype=float)
    fwd = corrs.pts2 - transfer(H, corrs.pts1)
    bwd = corrs.pts1 - transfer(np.linalg.inv(H), corrs.pts2)
    return np.sum(fwd**2, axis=1) + np.sum(bwd**2, axis=1)


def rmse(corrs, H) -> float:
    """Quadratic mean of the symmetric per-pair residual ``sqrt((|fwd|^2 + |bwd|^2) / 8)``."""
    if len(corrs) == 0:
        raise ValueError("empty correspondence set")
    return math.sqrt(_transfer_sq(corrs, H).sum() / (8 * len(corrs)))


def rmse_weighted(corrs, H) -> float:
    """Like :func:`rmse` with pair weights ``1 / (s^2 + s'^2)``."""
    if len(corrs) == 0:
        raise ValueError("empty correspondence set")
    w = 1.0 / (corrs.s1**2 + corrs.s2**2)
    return math.sqrt((w * _transfer_sq(corrs, H)).sum() / (8 * w.sum()))


def _fitted_points(prob: _Problem, h, iterations=5):
    """Fitted points minimizing the Mahalanobis corrections for a fixed ``h``."""
    y1, y2 = prob.l1.copy(), prob.l2.copy()
    for _ in range(iterations):
        lin = _linearize(prob, h, y1, y2)
        _, v, _ = _corrections(lin, np.zeros(8))
        dy = lin.dl + v
        y1 = _unit(y1 + np.einsum("nij,nj->ni", lin.N1, dy[:, :2]))
        y2 = _unit(y2 + np.einsum("nij,nj->ni", lin.N2, dy[:, 2:]))
    return y1, y2


@dataclass
class CaseComparison:
    n: int
    sigma_x_min: float
    sigma_x_max: float
    sigma0_equal: float
    sigma0_scale: float
    l_mean_alg_ml: float
    l_max_alg_ml: float
    l_mean_equal_scale: float
    l_max_equal_scale: float
    fits: dict = field(repr=False, default_factory=dict)

    @property
    def sigma_x_ratio(self):
        return self.sigma_x_max / self.sigma_x_min

    def row(self):
        return {
            "I": self.n,
            "min_sigma_x": self.sigma_x_min,
            "max_sigma_x": self.sigma_x_max,
            "ratio_sigma_x": self.sigma_x_ratio,
            "sigma0_w1": self.sigma0_equal,
            "sigma0_ws": self.sigma0_scale,
            "l_mean_alg_ml": self.l_mean_alg_ml,
            "l_max_alg_ml": self.l_max_alg_ml,
            "l_mean_1_s": self.l_mean_equal_scale,
            "l_max_1_s": self.l_max_equal_scale,
        }


TABLE_COLUMNS = (
    "I", "min_sigma_x", "max_sigma_x", "ratio_sigma_x", "sigma0_w1", "sigma0_ws",
    "l_mean_alg_ml", "l_max_alg_ml", "l_mean_1_s", "l_max_1_s",
)


def compare_case(corrs, sigma=1.0) -> CaseComparison:
    """Accuracy comparison of one case.

    ALG|ML compares the algebraic and the equally weighted ML estimate,
    1|s the equally weighted and the scale-weighted ML estimate when the
    scale-dependent noise model holds.  Both comparisons linearize at the
    ML solution of the reference so that the losses are at least one.
    """
    if not isinstance(corrs, Correspondences):
        corrs = Correspondences(corrs)
    eq, sc = WeightScheme("equal", sigma), WeightScheme("scale", sigma)
    alg = estimate_algebraic(corrs, eq)
    ml1 = estimate_ml(corrs, eq)
    mls = estimate_ml(corrs, sc)

    prob1 = _Problem(corrs.pts1, corrs.pts2, *eq.point_sigmas(corrs))
    lin1 = _linearize(prob1, ml1.h_cond, *_fitted_points(prob1, ml1.h_cond))
    W1 = lin1.W
    l_alg = loss_metrics(algebraic_covariance(lin1, W1), np.linalg.inv(lin1.normal_matrix(W1)))

    probs = _Problem(corrs.pts1, corrs.pts2, *sc.point_sigmas(corrs))
    ys = _fitted_points(probs, mls.h_cond)
    lins = _linearize(probs, mls.h_cond, *ys)
    Ws = lins.W
    # equal weights applied while the true covariance is scale dependent
    We = _linearize(probs, mls.h_cond, *ys, cov1=prob1.cov1, cov2=prob1.cov2).W
    Ne_inv = np.linalg.inv(lins.normal_matrix(We))
    mid = np.einsum("nia,nij,njk,nkl,nlb->ab", lins.A, We, np.linalg.inv(Ws), We, lins.A)
    l_ws = loss_metrics(Ne_inv @ mid @ Ne_inv, np.linalg.inv(lins.normal_matrix(Ws)))

    s1, s2 = sc.point_sigmas(corrs)
    sx = np.concatenate([s1, s2])
    return CaseComparison(
        n=len(corrs),
        sigma_x_min=float(sx.min()),
        sigma_x_max=float(sx.max()),
        sigma0_equal=ml1.sigma0,
        sigma0_scale=mls.sigma0,
        l_mean_alg_ml=l_alg[0],
        l_max_alg_ml=l_alg[1],
        l_mean_equal_scale=l_ws[0],
        l_max_equal_scale=l_ws[1],
        fits={"algebraic": alg, "ml_equal": ml1, "ml_scale": mls},
    )


def compare_four(corrs, H_ref, fits=None):
    """RMSE and weighted RMSE of the reference, algebraic, ML-equal and ML-scale homographies."""
    if not isinstance(corrs, Correspondences):
        corrs = Correspondences(corrs)
    if fits is None:
        fits = {
            "algebraic": estimate_algebraic(corrs),
            "ml_equal": estimate_ml(corrs, WeightScheme("equal")),
            "ml_scale": estimate_ml(corrs, WeightScheme("scale")),
        }
    Hs = {"reference": np.asarray(H_ref, dtype=float)}
    Hs.update({k: f.homography for k, f in fits.items()})
    return {k: {"rmse": rmse(corrs, H), "rmse_w": rmse_weighted(corrs, H)} for k, H in Hs.items()}


def aggregate_rows(rows, columns=TABLE_COLUMNS):
    """Column-wise ``mean`` and ``max`` rows of a table of case rows."""
    if not rows:
        raise ValueError("no rows to aggregate")
    cols = [c for c in columns if c in rows[0]]
    data = np.array([[float(r[c]) for c in cols] for r in rows])
    mean = [float(v) for v in np.nanmean(data, axis=0)]
    mx = [float(v) for v in np.nanmax(data, axis=0)]
    return dict(zip(cols, mean)), dict(zip(cols, mx))
