"""Evaluation measures: colour-histogram intersection against the
reference, and windowed structural similarity against the ground truth.

HIS bins the chrominance plane into the same 21x21 grid the training
histogram uses, but with hard nearest-node assignment (metrics need no
gradients). SSIM follows the standard recipe: 11x11 Gaussian window
(sigma 1.5), K1=0.01, K2=0.03, dynamic range 1, averaged over all valid
window positions. Structure is judged on luminance renderings so it
stays independent of the colour quality HIS measures.
"""

from __future__ import annotations

import numpy as np

from .colorspace import LabImage, luma_of
from .tensor import ShapeError, Tensor

__all__ = ["his_score", "ssim_score", "hard_histogram"]


def hard_histogram(ab: np.ndarray, bins_per_axis: int = 21) -> np.ndarray:
    """Normalised joint ab histogram with nearest-node binning."""
    nb = bins_per_axis
    ia = np.clip(np.rint((ab[0].reshape(-1) + 1.0) * 0.5 * (nb - 1)), 0, nb - 1).astype(int)
    ib = np.clip(np.rint((ab[1].reshape(-1) + 1.0) * 0.5 * (nb - 1)), 0, nb - 1).astype(int)
    hist = np.zeros((nb, nb))
    np.add.at(hist, (ia, ib), 1.0)
    return hist.reshape(-1) / ia.size


def his_score(pred: LabImage, ref: LabImage, bins_per_axis: int = 21) -> float:
    """Histogram intersection of chrominance distributions, in [0, 1].

    Sizes may differ; only the colour distributions are compared.
    """
    h_pred = hard_histogram(pred.ab.data, bins_per_axis)
    h_ref = hard_histogram(ref.ab.data, bins_per_axis)
    return float(np.minimum(h_pred, h_ref).sum())


def _gaussian_kernel1d(sigma: float = 1.5, radius: int = 5) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode weighted mean with an odd 1-D kernel."""
    r = kernel.size // 2
    h, w = img.shape
    rows = np.zeros((h, w - 2 * r))
    for i, kv in enumerate(kernel):
        rows += kv * img[:, i:i + w - 2 * r]
    out = np.zeros((h - 2 * r, w - 2 * r))
    for i, kv in enumerate(kernel):
        out += kv * rows[i:i + h - 2 * r, :]
    return out


def ssim_score(pred_gray: Tensor | np.ndarray, target_gray: Tensor | np.ndarray,
               k1: float = 0.01, k2: float = 0.03, sigma: float = 1.5,
               data_range: float = 1.0) -> float:
    """Mean structural similarity between two grayscale images in [-1, 1]
    territory: 1 at identity, negative under anticorrelation."""
    x = pred_gray.data if isinstance(pred_gray, Tensor) else np.asarray(pred_gray, float)
    y = target_gray.data if isinstance(target_gray, Tensor) else np.asarray(target_gray, float)
    x = x[0] if x.ndim == 3 else x
    y = y[0] if y.ndim == 3 else y
    if x.shape != y.shape:
        raise ShapeError(f"ssim inputs differ: {x.shape} vs {y.shape}")
    if min(x.shape) < 11:
        raise ShapeError(f"ssim needs at least 11x11 pixels, got {x.shape}")

    kernel = _gaussian_kernel1d(sigma=sigma, radius=5)
    mu_x = _windowed_mean(x, kernel)
    mu_y = _windowed_mean(y, kernel)
    xx = _windowed_mean(x * x, kernel) - mu_x * mu_x
    yy = _windowed_mean(y * y, kernel) - mu_y * mu_y
    xy = _windowed_mean(x * y, kernel) - mu_x * mu_y

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / \
               ((mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2))
    return float(ssim_map.mean())


def ssim_of_images(pred: LabImage, target: LabImage) -> float:
    """SSIM on the luminance-only renderings of two Lab images."""
    return ssim_score(luma_of(pred), luma_of(target))
