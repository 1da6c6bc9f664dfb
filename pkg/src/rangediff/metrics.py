"""Generation-quality metrics over a pluggable feature extractor.

All heavy numerics run in float64.  Images enter these functions at 8-bit
dynamic range (uint8 or float in [0, 255], shape (C, H, W)); feature and
probability matrices are plain numpy arrays.

The default desk-scale extractor is a fixed-seed random-projection conv
stack: deterministic and training-free, so metric comparisons are stable in
CI.  The trained quality-filter trunk can serve as a domain-aware
alternative.  Scores from different extractors are not comparable with each
other or with any published numbers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import correlate1d
from scipy.special import rel_entr

logger = logging.getLogger(__name__)

DYNAMIC_RANGE = 255.0
SSIM_C1 = (0.01 * DYNAMIC_RANGE) ** 2
SSIM_C2 = (0.03 * DYNAMIC_RANGE) ** 2


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-d Gaussian taps."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"window size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _local_mean(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable windowed mean, valid region only."""
    r = len(kernel) // 2
    out = correlate1d(plane, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[r : plane.shape[0] - r, r : plane.shape[1] - r]


def ssim(a, b, window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity over sliding Gaussian windows.

    Inputs are same-shape (C, H, W) or (H, W) images at 8-bit dynamic
    range; channels are averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ValueError(f"expected (C, H, W) or (H, W) images, got shape {a.shape}")
    if window_size % 2 == 0:
        raise ValueError(f"window size must be odd, got {window_size}")
    if window_size > min(a.shape[1], a.shape[2]):
        raise ValueError("window larger than image")
    kernel = gaussian_window(window_size, sigma)
    values = []
    for ca, cb in zip(a, b):
        mu_a = _local_mean(ca, kernel)
        mu_b = _local_mean(cb, kernel)
        var_a = _local_mean(ca * ca, kernel) - mu_a * mu_a
        var_b = _local_mean(cb * cb, kernel) - mu_b * mu_b
        cov = _local_mean(ca * cb, kernel) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def matrix_sqrt_psd(a: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition with eigenvalue clamping."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("matrix contains NaN or infinite entries")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    a = (a + a.T) / 2.0
    lam, q = np.linalg.eigh(a)
    floor = -tol * max(1.0, float(lam[-1]))
    if lam[0] < floor:
        raise ValueError(f"matrix is not PSD (eigenvalue {lam[0]:.3e})")
    root = q @ (np.sqrt(np.clip(lam, 0.0, None))[:, None] * q.T)
    return (root + root.T) / 2.0


def fid(feats_real: np.ndarray, feats_gen: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    Uses the symmetrized product (S_r^1/2 S_g S_r^1/2)^1/2 inside the trace
    so the matrix square root always sees a PSD argument; covariances use
    the unbiased (n-1) estimator; tiny negative totals from roundoff clamp
    to zero.
    """
    feats_real = np.asarray(feats_real, dtype=np.float64)
    feats_gen = np.asarray(feats_gen, dtype=np.float64)
    if feats_real.ndim != 2 or feats_gen.ndim != 2:
        raise ValueError("feature sets must be 2-d (n_samples x width)")
    if feats_real.shape[1] != feats_gen.shape[1]:
        raise ValueError(
            f"feature width mismatch: {feats_real.shape[1]} vs {feats_gen.shape[1]}"
        )
    k = feats_real.shape[1]
    if feats_real.shape[0] < 2 or feats_gen.shape[0] < 2:
        raise ValueError("need at least 2 samples per side")
    if min(feats_real.shape[0], feats_gen.shape[0]) < k + 1:
        logger.warning(
            "fewer samples than feature width + 1 (%d vs %d); covariance is singular",
            min(feats_real.shape[0], feats_gen.shape[0]),
            k + 1,
        )
    mu_r, mu_g = feats_real.mean(axis=0), feats_gen.mean(axis=0)
    cov_r = np.atleast_2d(np.cov(feats_real, rowvar=False))
    cov_g = np.atleast_2d(np.cov(feats_gen, rowvar=False))
    root_r = matrix_sqrt_psd(cov_r)
    inner = root_r @ cov_g @ root_r
    cross = matrix_sqrt_psd((inner + inner.T) / 2.0)
    value = float(
        np.sum((mu_r - mu_g) ** 2) + np.trace(cov_r) + np.trace(cov_g) - 2.0 * np.trace(cross)
    )
    if value < 0.0:
        logger.debug("clamping small negative FID %.3e to 0", value)
        value = 0.0
    return value


def inception_score(probs: np.ndarray, n_splits: int = 10) -> tuple:
    """exp(mean KL(p(y|x) || marginal)) per split; returns (mean, std)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probability matrix must be 2-d")
    if n_splits < 1 or n_splits > probs.shape[0]:
        raise ValueError(f"n_splits={n_splits} invalid for {probs.shape[0]} rows")
    if probs.min() < 0.0 or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("rows must be probability distributions summing to 1")
    scores = []
    for chunk in np.array_split(probs, n_splits):
        marginal = chunk.mean(axis=0)
        kl = rel_entr(chunk, marginal[None, :]).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    scores = np.asarray(scores)
    return float(scores.mean()), float(scores.std())


class FeatureExtractor(Protocol):
    """Pluggable image encoder for FID features and IS class probabilities."""

    extractor_id: str

    def features(self, images: np.ndarray) -> np.ndarray: ...

    def class_probs(self, images: np.ndarray) -> np.ndarray: ...


def _to_unit_tensor(images: np.ndarray) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) image stack, got shape {arr.shape}")
    return torch.from_numpy(arr / 127.5 - 1.0)


class RandomProjectionExtractor:
    """Fixed-seed random conv features; deterministic and training-free."""

    def __init__(self, seed: int = 0, feature_dim: int = 64, num_classes: int = 6):
        self.extractor_id = f"random-projection-{seed}"
        self.feature_dim = feature_dim
        rng = torch.Generator().manual_seed(seed)

        def w(*shape, fan_in):
            return torch.randn(shape, generator=rng) / np.sqrt(fan_in)

        self._convs = [
            w(16, 3, 3, 3, fan_in=27),
            w(32, 16, 3, 3, fan_in=144),
            w(feature_dim, 32, 3, 3, fan_in=288),
        ]
        self._head = w(num_classes, feature_dim, fan_in=feature_dim)

    def _trunk(self, images: np.ndarray) -> torch.Tensor:
        x = _to_unit_tensor(images)
        with torch.no_grad():
            for weight in self._convs:
                x = F.relu(F.conv2d(x, weight, stride=2, padding=1))
            return x.mean(dim=(2, 3))

    def features(self, images: np.ndarray) -> np.ndarray:
        return self._trunk(images).numpy().astype(np.float64)

    def class_probs(self, images: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            logits = self._trunk(images) @ self._head.T
            return torch.softmax(logits, dim=1).numpy().astype(np.float64)


class FilterTrunkExtractor:
    """Domain-aware alternative: features from a trained quality filter."""

    def __init__(self, filter_model):
        self.model = filter_model
        self.extractor_id = "quality-filter-trunk"

    def features(self, images: np.ndarray) -> np.ndarray:
        x = _to_unit_tensor(images)
        self.model.net.eval()
        with torch.no_grad():
            return self.model.net.features(x).numpy().astype(np.float64)

    def class_probs(self, images: np.ndarray) -> np.ndarray:
        x = _to_unit_tensor(images)
        self.model.net.eval()
        with torch.no_grad():
            p = torch.sigmoid(self.model.net(x)).numpy().astype(np.float64)
        return np.stack([1.0 - p, p], axis=1)


@dataclass
class MetricReport:
    is_mean: float
    is_std: float
    fid: float
    ssim_mean: float
    n_real: int
    n_generated: int
    extractor_id: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def compute_metric_report(
    real_images: np.ndarray,
    gen_images: np.ndarray,
    extractor: FeatureExtractor,
    n_splits: int = 10,
    ssim_window: int = 11,
) -> MetricReport:
    """IS/FID plus mean SSIM of each generated image vs its nearest real one.

    The sets are unpaired; "nearest" is by extractor-feature distance.  This
    pairing rule is a documented choice, not a property of SSIM itself.
    """
    feats_real = extractor.features(real_images)
    feats_gen = extractor.features(gen_images)
    fid_value = fid(feats_real, feats_gen)
    probs = extractor.class_probs(gen_images)
    is_mean, is_std = inception_score(probs, n_splits=min(n_splits, len(gen_images)))

    d2 = (
        np.sum(feats_gen**2, axis=1)[:, None]
        - 2.0 * feats_gen @ feats_real.T
        + np.sum(feats_real**2, axis=1)[None, :]
    )
    nearest = np.argmin(d2, axis=1)
    window = min(ssim_window, real_images.shape[-1], real_images.shape[-2])
    if window % 2 == 0:
        window -= 1
    ssim_values = [
        ssim(gen_images[i], real_images[nearest[i]], window_size=window)
        for i in range(len(gen_images))
    ]
    return MetricReport(
        is_mean=is_mean,
        is_std=is_std,
        fid=fid_value,
        ssim_mean=float(np.mean(ssim_values)),
        n_real=int(len(real_images)),
        n_generated=int(len(gen_images)),
        extractor_id=extractor.extractor_id,
    )
