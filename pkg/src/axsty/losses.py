"""Training objectives: pixel, colour-histogram, smoothness and
adversarial terms, combined per scale into one weighted total.

The histogram term compares differentiable soft histograms of the
predicted and reference chrominance on a 21x21 grid over [-1,1]^2
(441 joint bins): each pixel spreads unit mass bilinearly over the
four surrounding grid nodes, so gradients flow back to the pixels.
Distance between histograms is a symmetric chi-squared with a small
epsilon guarding empty bins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .colorspace import LabImage
from .tensor import ShapeError, Tensor, _make

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "huber_loss",
    "soft_histogram",
    "histogram_loss",
    "tv_loss",
    "lsgan_losses",
    "PatchDiscriminator",
    "multiscale_ground_truth",
    "total_loss",
]


@dataclass
class LossWeights:
    pixel: float = 100.0
    hist: float = 2.0
    tv: float = 50.0
    gan: float = 1.0


@dataclass
class ScaleTerms:
    pixel: float = 0.0
    hist: float = 0.0
    tv: float = 0.0
    gen: float = 0.0
    disc: float = 0.0


@dataclass
class LossBreakdown:
    """Per-scale raw term values and the weighted total, as accumulated."""

    scales: dict[int, ScaleTerms] = field(default_factory=dict)
    total: float = 0.0


def huber_loss(pred: Tensor, target: Tensor, delta: float = 1.0) -> Tensor:
    """Mean smooth-L1: 0.5*d^2 below delta, delta*(|d| - delta/2) above."""
    if pred.shape != target.shape:
        raise ShapeError(f"huber_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    absdiff = T.absolute(diff)
    quadratic = T.square(diff) * 0.5
    linear = absdiff * delta - (0.5 * delta * delta)
    small = Tensor((np.abs(diff.data) < delta).astype(np.float64))
    big = Tensor(1.0 - small.data)
    return (quadratic * small + linear * big).mean()


def soft_histogram(ab: Tensor, bins_per_axis: int = 21) -> Tensor:
    """Differentiable joint chrominance histogram.

    Input [2,H,W] with values in [-1,1]; output a flat [bins^2] tensor
    of non-negative weights summing to 1. Implemented as one fused op
    with a hand-derived backward (the bilinear weights are piecewise
    linear in the pixel values).
    """
    if ab.ndim != 3 or ab.shape[0] != 2:
        raise ShapeError(f"soft_histogram input must be [2,H,W], got {ab.shape}")
    if not np.all(np.isfinite(ab.data)):
        raise ValueError("soft_histogram input contains non-finite values")
    nb = bins_per_axis
    n_pix = ab.shape[1] * ab.shape[2]
    a = ab.data[0].reshape(-1)
    b = ab.data[1].reshape(-1)

    # grid coordinates in [0, nb-1]
    ua = np.clip((a + 1.0) * 0.5 * (nb - 1), 0.0, nb - 1)
    ub = np.clip((b + 1.0) * 0.5 * (nb - 1), 0.0, nb - 1)
    ia = np.minimum(ua.astype(np.int64), nb - 2)
    ib = np.minimum(ub.astype(np.int64), nb - 2)
    fa = ua - ia
    fb = ub - ib

    hist = np.zeros((nb, nb))
    w00 = (1 - fa) * (1 - fb)
    w01 = (1 - fa) * fb
    w10 = fa * (1 - fb)
    w11 = fa * fb
    np.add.at(hist, (ia, ib), w00)
    np.add.at(hist, (ia, ib + 1), w01)
    np.add.at(hist, (ia + 1, ib), w10)
    np.add.at(hist, (ia + 1, ib + 1), w11)
    hist /= n_pix

    scale = 0.5 * (nb - 1) / n_pix
    interior_a = ((a + 1.0) * 0.5 * (nb - 1) > 0.0) & ((a + 1.0) * 0.5 * (nb - 1) < nb - 1)
    interior_b = ((b + 1.0) * 0.5 * (nb - 1) > 0.0) & ((b + 1.0) * 0.5 * (nb - 1) < nb - 1)

    def back(g):
        # d hist[ia+da, ib+db] / d a = +-(1 or fb terms) * scale, zero when clamped
        g00 = g[ia, ib]
        g01 = g[ia, ib + 1]
        g10 = g[ia + 1, ib]
        g11 = g[ia + 1, ib + 1]
        ga = ((g10 - g00) * (1 - fb) + (g11 - g01) * fb) * scale * interior_a
        gb = ((g01 - g00) * (1 - fa) + (g11 - g10) * fa) * scale * interior_b
        grad = np.stack([ga, gb]).reshape(ab.shape)
        return (grad,)

    return _make(hist.reshape(-1), (ab,), lambda g: back(g.reshape(nb, nb)))


def histogram_loss(h_pred: Tensor, h_ref: Tensor, eps: float = 1e-5) -> Tensor:
    """Symmetric chi-squared distance: 2 * sum (p-r)^2 / (p+r+eps).

    Fused op: the denominator depends on both inputs, so the backward
    applies the full quotient rule to each slot.
    """
    if h_pred.shape != h_ref.shape:
        raise ShapeError(f"histogram bins differ: {h_pred.shape} vs {h_ref.shape}")
    diff = h_pred.data - h_ref.data
    denom = h_pred.data + h_ref.data + eps
    num = diff * diff
    value = 2.0 * np.sum(num / denom)

    def back(g):
        s = g.reshape(())
        common = s * 2.0 / (denom * denom)
        gp = common * (2.0 * diff * denom - num)
        gr = common * (-2.0 * diff * denom - num)
        return (gp, gr)

    return _make(np.asarray(value), (h_pred, h_ref), back)


def tv_loss(ab: Tensor) -> Tensor:
    """Mean squared forward difference over both spatial axes."""
    if ab.ndim != 3:
        raise ShapeError(f"tv_loss input must be [C,H,W], got {ab.shape}")
    c, h, w = ab.shape
    terms = []
    count = 0
    if w > 1:
        dh = T.crop(ab, (slice(None), slice(None), slice(1, None))) \
            - T.crop(ab, (slice(None), slice(None), slice(0, w - 1)))
        terms.append(T.square(dh).sum())
        count += c * h * (w - 1)
    if h > 1:
        dv = T.crop(ab, (slice(None), slice(1, None), slice(None))) \
            - T.crop(ab, (slice(None), slice(0, h - 1), slice(None)))
        terms.append(T.square(dv).sum())
        count += c * (h - 1) * w
    if not terms:
        return Tensor(0.0)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / count)


def lsgan_losses(disc_real: Tensor, disc_fake: Tensor) -> tuple[Tensor, Tensor]:
    """Least-squares adversarial penalties on patch logit maps.

    Returns (discriminator loss, generator loss):
    L_D = 0.5*mean((real-1)^2) + 0.5*mean(fake^2), L_G = 0.5*mean((fake-1)^2).
    """
    l_d = T.square(disc_real - 1.0).mean() * 0.5 + T.square(disc_fake).mean() * 0.5
    l_g = T.square(disc_fake - 1.0).mean() * 0.5
    return l_d, l_g


class PatchDiscriminator:
    """Three stride-2 convs emitting a patch logit map from a [3,H,W]
    luminance+chrominance volume; H, W must be at least 8."""

    CHANNELS = (16, 32)

    def __init__(self, rng: np.random.Generator, in_channels: int = 3):
        c1, c2 = self.CHANNELS

        def he(k_out, c_in):
            return Tensor(rng.normal(0, np.sqrt(2.0 / (c_in * 9)), (k_out, c_in, 3, 3)),
                          requires_grad=True)

        self.w1, self.b1 = he(c1, in_channels), Tensor(np.zeros(c1), requires_grad=True)
        self.w2, self.b2 = he(c2, c1), Tensor(np.zeros(c2), requires_grad=True)
        self.w3, self.b3 = he(1, c2), Tensor(np.zeros(1), requires_grad=True)

    def forward(self, lab: Tensor) -> Tensor:
        if lab.ndim != 3 or lab.shape[0] != self.w1.shape[1]:
            raise ShapeError(f"discriminator expects [{self.w1.shape[1]},H,W], got {lab.shape}")
        if lab.shape[1] < 8 or lab.shape[2] < 8:
            raise ShapeError(f"discriminator input {lab.shape[1:]} too small (min 8x8)")
        x = T.relu(T.conv2d(lab, self.w1, self.b1, stride=2))
        x = T.relu(T.conv2d(x, self.w2, self.b2, stride=2))
        return T.conv2d(x, self.w3, self.b3, stride=2)

    def named_tensors(self, prefix: str):
        yield f"{prefix}.conv1.w", self.w1
        yield f"{prefix}.conv1.b", self.b1
        yield f"{prefix}.conv2.w", self.w2
        yield f"{prefix}.conv2.b", self.b2
        yield f"{prefix}.conv3.w", self.w3
        yield f"{prefix}.conv3.b", self.b3


def patch_discriminator_forward(lab: Tensor, disc: PatchDiscriminator) -> Tensor:
    return disc.forward(lab)


def multiscale_ground_truth(img: LabImage, n_scales: int = 4) -> list[LabImage]:
    """Level 1 is the image itself; each further level 2x average-pools
    both channels. Dimensions must divide by 2^(n_scales-1)."""
    factor = 2 ** (n_scales - 1)
    if img.height % factor or img.width % factor:
        raise ShapeError(
            f"{img.height}x{img.width} not divisible by {factor} for {n_scales} scales")
    out = [img]
    cur = img
    for _ in range(n_scales - 1):
        cur = LabImage(L=T.avg_pool2x(cur.L), ab=T.avg_pool2x(cur.ab))
        out.append(cur)
    return out


def total_loss(preds, target_scales: list[LabImage], reference_scales: list[LabImage],
               disc_gen_outputs: list[Tensor] | None, weights: LossWeights,
               huber_delta: float = 1.0, hist_eps: float = 1e-5,
               hist_bins: int = 21) -> tuple[Tensor, LossBreakdown]:
    """Weighted multi-scale objective.

    Per scale: pixel term against the pooled ground-truth chrominance,
    histogram term against the pooled reference chrominance, smoothness
    on the prediction, and the generator's adversarial term when patch
    logits are supplied. Zero weights skip their term's computation, so
    ablation presets change no other term.
    """
    preds = list(preds)
    if len(preds) != len(target_scales) or len(preds) != len(reference_scales):
        raise ShapeError("prediction/ground-truth scale counts differ")
    breakdown = LossBreakdown()
    total: Tensor | None = None
    for i, pred in enumerate(preds):
        scale = i + 1
        terms = ScaleTerms()
        contrib: Tensor | None = None

        def accumulate(term: Tensor, weight: float):
            nonlocal contrib
            weighted = term * weight
            contrib = weighted if contrib is None else contrib + weighted

        if weights.pixel != 0.0:
            pix = huber_loss(pred, target_scales[i].ab, delta=huber_delta)
            terms.pixel = pix.item()
            accumulate(pix, weights.pixel)
        if weights.hist != 0.0:
            h_pred = soft_histogram(pred, hist_bins)
            h_ref = soft_histogram(reference_scales[i].ab.detach(), hist_bins)
            hist = histogram_loss(h_pred, h_ref, eps=hist_eps)
            terms.hist = hist.item()
            accumulate(hist, weights.hist)
        if weights.tv != 0.0:
            tv = tv_loss(pred)
            terms.tv = tv.item()
            accumulate(tv, weights.tv)
        if (weights.gan != 0.0 and disc_gen_outputs is not None
                and disc_gen_outputs[i] is not None):
            _, l_g = lsgan_losses(disc_gen_outputs[i].detach(), disc_gen_outputs[i])
            terms.gen = l_g.item()
            accumulate(l_g, weights.gan)

        breakdown.scales[scale] = terms
        if contrib is not None:
            total = contrib if total is None else total + contrib
    if total is None:
        total = Tensor(0.0)
    breakdown.total = total.item()
    return total, breakdown
