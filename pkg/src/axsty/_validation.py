"""Input validation helpers shared by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np

from .colorspace import LabImage, rgb_to_lab
from .tensor import ShapeError


def check_rgb_image(arr, name: str = "image") -> np.ndarray:
    """Validate a channels-first [3,H,W] RGB array with values in [0,1]."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"{name} must have shape (3, H, W), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_divisible(h: int, w: int, factor: int = 16) -> None:
    if h % factor or w % factor:
        raise ShapeError(
            f"spatial size {h}x{w} must be divisible by {factor} "
            f"(backbone halves resolution four times)")


def check_pair_sizes(target: LabImage, reference: LabImage) -> None:
    if (target.height, target.width) != (reference.height, reference.width):
        raise ShapeError(
            f"target {target.height}x{target.width} and reference "
            f"{reference.height}x{reference.width} sizes differ")


def as_lab_pair(target_rgb, reference_rgb) -> tuple[LabImage, LabImage]:
    """Validate an RGB pair and convert to normalised Lab."""
    t = rgb_to_lab(check_rgb_image(target_rgb, "target"))
    r = rgb_to_lab(check_rgb_image(reference_rgb, "reference"))
    check_pair_sizes(t, r)
    check_divisible(t.height, t.width)
    return t, r
