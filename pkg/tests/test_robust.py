import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_homography
from homkit.correspondences import Correspondences
from homkit.geom import DegenerateConfigurationError, local_affinities, normalize_homography, transfer
from homkit.robust import (
    EstimatorConfig,
    Prefilter,
    ProsacSampler,
    estimate,
    lo_refine,
    prefilter,
    ransac_iterations_needed,
    residuals,
    sample_cheirality_check,
    sample_prosac,
    sample_uniform,
    score,
    solver_two_ac,
)
from homkit.robust.scoring import loss, score_residuals
from homkit.synth import SceneConfig, generate_scene


def make_corrs(rng, n_in=60, n_out=0, sigma=0.0, H=None):
    H = random_homography(rng) if H is None else H
    p1 = rng.uniform(0, 640, size=(n_in, 2))
    p2 = transfer(H, p1) + rng.normal(scale=sigma, size=(n_in, 2)) if sigma else transfer(H, p1)
    o1 = rng.uniform(0, 640, size=(n_out, 2))
    o2 = rng.uniform(0, 640, size=(n_out, 2))
    c = Correspondences.from_points(np.vstack([p1, o1]), np.vstack([p2, o2]),
                                    snn=np.concatenate([np.full(n_in, 0.2), np.full(n_out, 0.9)]))
    return c, H


def test_prefilter_modes():
    data = np.zeros((3, 10))
    data[:, 3] = data[:, 7] = 1.0
    data[:, 8] = [0.5, 0.7, 0.3]
    data[:, 9] = [0.9, 0.1, 0.5]
    c = Correspondences(data)
    sub, idx = prefilter(c)
    assert sub == c and idx.tolist() == [0, 1, 2]
    _, idx = prefilter(c.subset([0, 1]), snn_threshold=0.6)
    assert idx.tolist() == [0]
    _, idx = prefilter(c, Prefilter("top_k", 2))
    assert idx.tolist() == [0, 2]
    _, idx = prefilter(c, Prefilter("score_threshold", 0.4))
    assert idx.tolist() == [0, 2]
    with pytest.raises(KeyError):
        prefilter(Correspondences(data[:, :9]), Prefilter("top_k", 1))
    with pytest.raises(ValueError):
        Prefilter("top_k")


def test_sample_uniform_basic(rng):
    assert sorted(sample_uniform(4, 4, rng).tolist()) == [0, 1, 2, 3]
    s = sample_uniform(50, 4, rng)
    assert len(set(s.tolist())) == 4
    with pytest.raises(ValueError):
        sample_uniform(3, 4, rng)


def test_sample_uniform_frequencies():
    rng = np.random.default_rng(0)
    n, draws = 10, 100_000
    counts = np.bincount(np.concatenate([sample_uniform(n, 4, rng) for _ in range(draws)]), minlength=n)
    freq = counts / draws
    assert np.all(np.abs(freq - 0.4) <= 0.05 * 0.4)


def test_prosac_schedule_start_and_growth(rng):
    s = ProsacSampler(100, 4)
    first = s.sample(1, rng)
    assert set(first.tolist()) <= set(range(5)) and len(set(first.tolist())) == 4
    assert set(sample_prosac(100, 4, 1, rng).tolist()) <= set(range(5))
    sizes = [s.prefix_size(t) for t in range(1, 5000, 50)]
    assert all(b >= a for a, b in zip(sizes, sizes[1:]))
    assert s.prefix_size(10**9) == 100
    # after the schedule every index is reachable
    late = np.concatenate([s.sample(int(s.t_prime[-1]) + 1 + k, rng) for k in range(2000)])
    assert len(np.unique(late)) == 100


def test_cheirality_examples():
    pts = np.array([[0, 0], [10, 0], [0, 10], [10, 10]], dtype=float)
    assert sample_cheirality_check(pts, np.eye(3))
    assert sample_cheirality_check(pts, np.diag([1.0, 1.0, -1.0]))
    H = np.eye(3)
    H[2] = [-0.15, 0.0, 1.0]  # w = 1 - 0.15 x flips sign between x = 0 and x = 10
    assert not sample_cheirality_check(pts, H)


def test_score_examples():
    p = np.random.default_rng(1).uniform(0, 100, size=(20, 2))
    s, mask = score(p, p, np.eye(3), "ransac", 1.0)
    assert s == 20 and mask.all()
    assert score(p, p, np.eye(3), "msac", 1.0)[0] == 0.0
    assert score_residuals(np.array([0.0, 9.0]), "msac", 3.0)[0] == pytest.approx(9.0)
    assert score_residuals(np.array([0.0, 0.0, 4.0]), "lmeds", 1.0)[0] == 0.0
    with pytest.raises(ValueError):
        score_residuals(np.zeros(2), "nope", 1.0)


def test_iterations_needed_examples():
    assert ransac_iterations_needed(1.0, 4, 0.99, 1000) == 1
    assert ransac_iterations_needed(0.5, 4, 0.99, 1000) == 72
    assert ransac_iterations_needed(0.01, 4, 0.99, 1000) == 1000
    assert ransac_iterations_needed(0.0, 4, 0.99, 1000) == 1000


def test_lo_refine_fixed_point_on_exact_data(rng):
    c, H = make_corrs(rng, 50)
    H_out, s, mask = lo_refine(c.pts1, c.pts2, normalize_homography(H), 1.0)
    assert s == pytest.approx(0.0, abs=1e-12) and mask.all()


def test_lo_refine_improves_perturbed_model(rng):
    c, H = make_corrs(rng, 100, sigma=0.5)
    Hp = H * (1 + 0.01 * rng.normal(size=(3, 3)))
    s0, _ = score(c.pts1, c.pts2, Hp, "msac", 3.0)
    _, s1, _ = lo_refine(c.pts1, c.pts2, Hp, 3.0, "msac")
    assert s1 <= s0


def test_lo_refine_few_inliers_returns_input(rng):
    c, H = make_corrs(rng, 3, n_out=20)
    H_in = normalize_homography(H)
    H_out, _, mask = lo_refine(c.pts1, c.pts2, H_in, 1.0)
    assert H_out is H_in and mask.sum() <= 3


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scorer=st.sampled_from(["ransac", "msac", "lmeds"]))
def test_lo_refine_never_worse(seed, scorer):
    rng = np.random.default_rng(seed)
    c, H = make_corrs(rng, 40, n_out=40, sigma=1.0)
    Hp = H * (1 + 0.003 * rng.normal(size=(3, 3)))
    s0, _ = score(c.pts1, c.pts2, Hp, scorer, 3.0)
    _, s1, _ = lo_refine(c.pts1, c.pts2, Hp, 3.0, scorer)
    assert loss(scorer, s1) <= loss(scorer, s0)


def _affine_acs(rng, H, n):
    p1 = rng.uniform(0, 500, size=(n, 2))
    return p1, transfer(H, p1), local_affinities(H, p1)


def test_two_ac_solver_affine_and_projective(rng):
    A = np.eye(3)
    A[:2] = rng.normal(size=(2, 3)) + [[1, 0, 0], [0, 1, 0]]
    p1, p2, aff = _affine_acs(rng, A, 2)
    H = solver_two_ac(p1, p2, aff)
    q = rng.uniform(0, 500, size=(20, 2))
    assert np.max(np.linalg.norm(transfer(H, q) - transfer(A, q), axis=1)) < 1e-9
    P = random_homography(rng)
    p1, p2, aff = _affine_acs(rng, P, 2)
    assert np.max(np.linalg.norm(transfer(solver_two_ac(p1, p2, aff), q) - transfer(P, q), axis=1)) < 1e-6


def test_two_ac_solver_identity_and_degenerate():
    p = np.array([[10.0, 20.0], [200.0, 50.0]])
    H = solver_two_ac(p, p, np.stack([np.eye(2)] * 2))
    assert np.allclose(H, np.eye(3) / np.sqrt(3), atol=1e-12)
    with pytest.raises(DegenerateConfigurationError):
        solver_two_ac(p[[0, 0]], p[[0, 0]], np.stack([np.eye(2)] * 2))


def test_estimate_noise_free_all_inliers(rng):
    c, H = make_corrs(rng, 60)
    res = estimate(c, EstimatorConfig(threshold=1.0, seed=3))
    assert res.success and res.inlier_mask.all()
    assert np.max(np.linalg.norm(transfer(res.homography, c.pts1) - c.pts2, axis=1)) < 1e-9


def test_estimate_all_outliers_fails(rng):
    c, _ = make_corrs(rng, 0, n_out=60)
    res = estimate(c, EstimatorConfig(threshold=0.5, max_iterations=200))
    assert not res.success and res.homography is None and not res.inlier_mask.any()
    assert math.isnan(res.score)


def test_estimate_too_few_points(rng):
    c, _ = make_corrs(rng, 3)
    assert not estimate(c).success


@pytest.mark.parametrize(
    "kw",
    [
        {},
        {"scorer": "msac"},
        {"scorer": "lmeds"},
        {"local_opt": "lo_plus"},
        {"sampler": "prosac"},
        {"sampler": "prosac", "quality": "score"},
        {"solver": "two_ac"},
        {"residual": "symmetric"},
        {"scorer": "lsq"},
    ],
)
def test_estimate_variants_recover_scene(kw):
    case = generate_scene(SceneConfig(seed=5, outlier_fraction=0.0 if kw.get("scorer") == "lsq" else 0.4)).cases[0]
    cfg = EstimatorConfig(threshold=3.0, confidence=0.999, max_iterations=2000, seed=1, **kw)
    res = estimate(case.correspondences, cfg)
    assert res.success and res.iterations_used <= cfg.max_iterations
    p = case.correspondences.pts1[case.inliers]
    r = residuals(res.homography, p, transfer(case.homography_pixel, p))
    assert np.median(r) < 2.0
    # reported mask is exactly the thresholded residual set
    r_all = residuals(res.homography, case.correspondences.pts1, case.correspondences.pts2, cfg.residual)
    assert np.array_equal(res.inlier_mask, r_all <= cfg.threshold)


def test_estimate_deterministic():
    case = generate_scene(SceneConfig(seed=11)).cases[0]
    for kw in ({}, {"local_opt": "lo_plus"}, {"sampler": "prosac"}):
        cfg = EstimatorConfig(seed=42, **kw)
        a, b = estimate(case.correspondences, cfg), estimate(case.correspondences, cfg)
        assert np.array_equal(a.homography, b.homography)
        assert np.array_equal(a.inlier_mask, b.inlier_mask)
        assert (a.score, a.iterations_used) == (b.score, b.iterations_used)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), max_it=st.integers(1, 60))
def test_estimate_respects_max_iterations(seed, max_it):
    rng = np.random.default_rng(seed)
    c, _ = make_corrs(rng, 20, n_out=30, sigma=1.0)
    res = estimate(c, EstimatorConfig(max_iterations=max_it, seed=seed))
    assert res.iterations_used <= max_it
    if res.success:
        r = residuals(res.homography, c.pts1, c.pts2)
        assert np.array_equal(res.inlier_mask, r <= 3.0)


def test_estimator_config_validation():
    for bad in ({"threshold": 0}, {"confidence": 1.0}, {"max_iterations": 0}, {"min_iterations": 5, "max_iterations": 2},
                {"sampler": "x"}, {"scorer": "x"}, {"local_opt": "x"}, {"solver": "x"}, {"residual": "x"}):
        with pytest.raises(ValueError):
            EstimatorConfig(**bad)
    assert EstimatorConfig(prefilter={"kind": "top_k", "value": 5}).prefilter == Prefilter("top_k", 5)


def test_estimate_with_prefilter_reports_full_mask():
    case = generate_scene(SceneConfig(seed=2)).cases[0]
    c = case.correspondences
    res = estimate(c, EstimatorConfig(prefilter=Prefilter("top_k", 60), seed=0))
    assert res.success and len(res.inlier_mask) == len(c)
