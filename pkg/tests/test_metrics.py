import logging
import math

import numpy as np
import pytest
import scipy.linalg

from rangediff.metrics import (
    RandomProjectionExtractor,
    SSIM_C1,
    SSIM_C2,
    compute_metric_report,
    fid,
    gaussian_window,
    inception_score,
    matrix_sqrt_psd,
    ssim,
)

from conftest import np_rng


# ---------------------------------------------------------------- ssim


def test_ssim_self_similarity_is_one():
    img = np_rng(0).integers(0, 256, size=(3, 24, 24)).astype(np.float64)
    assert abs(ssim(img, img) - 1.0) <= 1e-9


def test_ssim_constant_images_closed_form():
    a = np.full((1, 16, 16), 100.0)
    b = np.full((1, 16, 16), 150.0)
    expected = (2 * 100 * 150 + SSIM_C1) / (100**2 + 150**2 + SSIM_C1)
    assert abs(ssim(a, b) - expected) <= 1e-9


def test_ssim_single_window_matches_direct_weighted_statistics():
    # when the window covers the whole image there is exactly one window;
    # the oracle computes the Gaussian-weighted moments directly
    rng = np_rng(1)
    a = rng.integers(0, 256, size=(9, 9)).astype(np.float64)
    b = rng.integers(0, 256, size=(9, 9)).astype(np.float64)
    k = gaussian_window(9, 1.5)
    w = np.outer(k, k)
    mu_a, mu_b = (w * a).sum(), (w * b).sum()
    var_a = (w * a * a).sum() - mu_a**2
    var_b = (w * b * b).sum() - mu_b**2
    cov = (w * a * b).sum() - mu_a * mu_b
    oracle = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )
    assert abs(ssim(a, b, window_size=9) - oracle) <= 1e-12


def test_ssim_symmetric():
    rng = np_rng(2)
    a = rng.integers(0, 256, size=(3, 20, 20)).astype(np.float64)
    b = rng.integers(0, 256, size=(3, 20, 20)).astype(np.float64)
    assert ssim(a, b) == ssim(b, a)


def test_ssim_penalizes_noise():
    rng = np_rng(3)
    a = rng.integers(0, 256, size=(20, 20)).astype(np.float64)
    noisy = np.clip(a + rng.normal(0, 40, a.shape), 0, 255)
    assert ssim(a, noisy) < ssim(a, a)


def test_ssim_validates_inputs():
    a = np.zeros((8, 8))
    with pytest.raises(ValueError, match="mismatch"):
        ssim(a, np.zeros((9, 9)))
    with pytest.raises(ValueError, match="odd"):
        ssim(a, a, window_size=4)
    with pytest.raises(ValueError, match="larger"):
        ssim(a, a, window_size=11)
    with pytest.raises(ValueError):
        gaussian_window(5, -1.0)


# ---------------------------------------------------------------- matrix sqrt


def test_matrix_sqrt_identity_and_diagonal():
    eye = np.eye(4)
    assert np.allclose(matrix_sqrt_psd(eye), eye)
    root = matrix_sqrt_psd(np.diag([4.0, 9.0]))
    assert np.allclose(root, np.diag([2.0, 3.0]))


def test_matrix_sqrt_reconstructs_random_psd():
    rng = np_rng(4)
    q, _ = np.linalg.qr(rng.normal(size=(16, 16)))
    lam = rng.uniform(0.1, 5.0, size=16)
    a = q @ np.diag(lam) @ q.T
    a = (a + a.T) / 2
    root = matrix_sqrt_psd(a)
    rel = np.linalg.norm(root @ root - a) / np.linalg.norm(a)
    assert rel < 1e-8
    assert np.allclose(root, root.T)
    assert np.linalg.eigvalsh(root).min() >= -1e-10


def test_matrix_sqrt_clamps_tiny_negative_eigenvalues():
    a = np.diag([1.0, -1e-12])
    root = matrix_sqrt_psd(a)
    assert root[1, 1] == 0.0


def test_matrix_sqrt_validates():
    with pytest.raises(ValueError, match="symmetric"):
        matrix_sqrt_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="NaN"):
        matrix_sqrt_psd(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="PSD"):
        matrix_sqrt_psd(np.diag([1.0, -0.5]))
    with pytest.raises(ValueError, match="square"):
        matrix_sqrt_psd(np.zeros((2, 3)))


# ---------------------------------------------------------------- fid


def test_fid_identical_sets_is_zero():
    feats = np_rng(5).normal(size=(64, 8))
    assert fid(feats, feats.copy()) <= 1e-6


def test_fid_pure_mean_shift_closed_form():
    feats = np_rng(6).normal(size=(128, 6))
    delta = np.linspace(0.5, 1.5, 6)
    value = fid(feats, feats + delta)
    assert value == pytest.approx(float(np.sum(delta**2)), abs=1e-6)


def test_fid_matches_analytic_gaussian_value():
    # independent oracle: population formula via scipy.linalg.sqrtm
    mu1, mu2 = np.array([0.0, 0.0]), np.array([1.0, -1.0])
    s1 = np.array([[1.0, 0.3], [0.3, 2.0]])
    s2 = np.array([[1.5, -0.2], [-0.2, 0.5]])
    cross = scipy.linalg.sqrtm(s1 @ s2)
    analytic = float(
        np.sum((mu1 - mu2) ** 2) + np.trace(s1 + s2 - 2 * np.real(cross))
    )
    rng = np_rng(7)
    x1 = rng.multivariate_normal(mu1, s1, size=20000)
    x2 = rng.multivariate_normal(mu2, s2, size=20000)
    assert abs(fid(x1, x2) - analytic) / analytic < 0.05


def test_fid_symmetric_and_rotation_invariant():
    rng = np_rng(8)
    a = rng.normal(size=(100, 5))
    b = rng.normal(size=(120, 5)) + 0.3
    assert abs(fid(a, b) - fid(b, a)) <= 1e-6
    q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    assert abs(fid(a @ q, b @ q) - fid(a, b)) <= 1e-6


def test_fid_validates_and_warns(caplog):
    with pytest.raises(ValueError, match="2 samples"):
        fid(np.zeros((1, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError, match="width"):
        fid(np.zeros((5, 3)), np.zeros((5, 4)))
    with caplog.at_level(logging.WARNING):
        fid(np_rng(9).normal(size=(4, 8)), np_rng(10).normal(size=(4, 8)))
    assert "singular" in caplog.text


# ---------------------------------------------------------------- inception score


def test_inception_score_identical_rows_is_exactly_one():
    probs = np.tile([0.2, 0.5, 0.3], (40, 1))
    mean, std = inception_score(probs, n_splits=4)
    assert mean == 1.0
    assert std == 0.0


def test_inception_score_distinct_one_hots_equals_class_count():
    m = 6
    probs = np.eye(m)
    mean, std = inception_score(probs, n_splits=1)
    assert mean == pytest.approx(m, rel=1e-12)
    assert std == 0.0


def test_inception_score_hand_computed_small_matrix():
    probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.6, 0.4], [0.5, 0.5]])
    scores = []
    for chunk in (probs[:2], probs[2:]):
        marginal = chunk.mean(axis=0)
        kls = [
            sum(p * math.log(p / q) for p, q in zip(row, marginal))
            for row in chunk
        ]
        scores.append(math.exp(float(np.mean(kls))))
    mean, std = inception_score(probs, n_splits=2)
    assert mean == pytest.approx(float(np.mean(scores)), rel=1e-12)
    assert std == pytest.approx(float(np.std(scores)), rel=1e-12)


def test_inception_score_bounds_on_random_inputs():
    rng = np_rng(11)
    for m in (2, 6):
        raw = rng.uniform(size=(50, m))
        probs = raw / raw.sum(axis=1, keepdims=True)
        mean, _ = inception_score(probs, n_splits=5)
        assert 1.0 <= mean <= m + 1e-9


def test_inception_score_validates():
    probs = np.tile([0.5, 0.5], (10, 1))
    with pytest.raises(ValueError, match="n_splits"):
        inception_score(probs, n_splits=11)
    with pytest.raises(ValueError, match="probability"):
        inception_score(np.array([[0.7, 0.7]]), n_splits=1)
    with pytest.raises(ValueError, match="probability"):
        inception_score(np.array([[1.2, -0.2]]), n_splits=1)


# ---------------------------------------------------------------- extractor + report


def images_stack(n, size=16, seed=12):
    return np_rng(seed).integers(0, 256, size=(n, 3, size, size)).astype(np.uint8)


def test_random_projection_extractor_deterministic():
    a = RandomProjectionExtractor(seed=3)
    b = RandomProjectionExtractor(seed=3)
    imgs = images_stack(8)
    assert np.array_equal(a.features(imgs), b.features(imgs))
    probs = a.class_probs(imgs)
    assert probs.shape == (8, 6)
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_extractor_seed_changes_projection():
    imgs = images_stack(4)
    a = RandomProjectionExtractor(seed=0).features(imgs)
    b = RandomProjectionExtractor(seed=1).features(imgs)
    assert not np.allclose(a, b)


def test_metric_report_on_identical_sets():
    imgs = images_stack(24, seed=13)
    report = compute_metric_report(imgs, imgs.copy(), RandomProjectionExtractor())
    assert report.fid <= 1e-6
    assert report.ssim_mean == pytest.approx(1.0, abs=1e-9)
    assert report.n_real == report.n_generated == 24
    assert report.is_mean >= 1.0
    assert report.extractor_id.startswith("random-projection")


def test_metric_report_detects_distribution_shift():
    real = images_stack(32, seed=14)
    shifted = np.clip(real.astype(np.int32) + 64, 0, 255).astype(np.uint8)
    same = compute_metric_report(real, real.copy(), RandomProjectionExtractor())
    far = compute_metric_report(real, shifted, RandomProjectionExtractor())
    assert far.fid > same.fid
    assert far.ssim_mean < same.ssim_mean
