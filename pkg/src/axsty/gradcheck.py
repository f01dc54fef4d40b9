"""Finite-difference verification suite covering every differentiable
operation and a composed end-to-end instance. Backs the gradcheck CLI
command and the acceptance tests."""

from __future__ import annotations

import numpy as np

from . import attention as att
from . import losses as L
from . import tensor as T
from .decoder import DecoderStageParams, PredictionHeadParams, decoder_stage, prediction_head
from .tensor import GradCheckReport, Tensor, grad_check


def _weighted(out: Tensor, rng) -> Tensor:
    w = Tensor(rng.uniform(-1, 1, out.shape))
    return (out * w).sum()


def run_suite(seed: int = 0, size: int = 4, tol: float = 1e-3,
              inject_bug: bool = False) -> list[tuple[str, GradCheckReport]]:
    """Gradient checks for each op on random [-1, 1] inputs.

    size controls the spatial extent of the map-shaped cases. With
    inject_bug=True one case uses a deliberately wrong backward, so a
    healthy harness must report at least one failure.
    """
    rng = np.random.default_rng(seed)
    s = size
    checks: list[tuple[str, GradCheckReport]] = []

    def case(name, fn, x0, case_tol=None):
        checks.append((name, grad_check(fn, Tensor(x0), tol=case_tol or tol)))

    a = rng.uniform(-1, 1, (s, s + 1))
    b = Tensor(rng.uniform(-1, 1, (s + 1, s)))
    case("matmul", lambda x: _weighted(T.matmul(x, b), np.random.default_rng(seed + 1)), a)

    w3 = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)))
    bias = Tensor(rng.uniform(-1, 1, 3))
    case("conv2d_3x3", lambda x: _weighted(T.conv2d(x, w3, bias),
                                           np.random.default_rng(seed + 2)),
         rng.uniform(-1, 1, (2, s, s)))
    w1 = Tensor(rng.uniform(-1, 1, (4, 2, 1, 1)))
    case("conv2d_1x1", lambda x: _weighted(T.conv2d(x, w1),
                                           np.random.default_rng(seed + 3)),
         rng.uniform(-1, 1, (2, s, s)))
    w_s = Tensor(rng.uniform(-1, 1, (2, 2, 3, 3)))
    case("conv2d_stride2", lambda x: _weighted(T.conv2d(x, w_s, stride=2),
                                               np.random.default_rng(seed + 4)),
         rng.uniform(-1, 1, (2, 2 * s, 2 * s)))

    case("relu", lambda x: _weighted(T.relu(x), np.random.default_rng(seed + 5)),
         rng.uniform(0.05, 1, (s, s)) * rng.choice([-1.0, 1.0], (s, s)))
    case("tanh", lambda x: _weighted(T.tanh(x), np.random.default_rng(seed + 6)),
         rng.uniform(-1, 1, (s, s)))
    case("softmax", lambda x: _weighted(T.softmax(x, axis=1),
                                        np.random.default_rng(seed + 7)),
         rng.uniform(-1, 1, (s, s + 2)))

    gamma = Tensor(rng.uniform(0.5, 1.5, 2))
    beta = Tensor(rng.uniform(-0.5, 0.5, 2))
    case("batch_norm", lambda x: _weighted(T.batch_norm(x, gamma, beta),
                                           np.random.default_rng(seed + 8)),
         rng.uniform(-1, 1, (2, s, s)))

    case("upsample2x", lambda x: _weighted(T.upsample2x(x),
                                           np.random.default_rng(seed + 9)),
         rng.uniform(-1, 1, (2, s, s)))
    case("avg_pool2x", lambda x: _weighted(T.avg_pool2x(x),
                                           np.random.default_rng(seed + 10)),
         rng.uniform(-1, 1, (2, 2 * s, 2 * s)))

    other = Tensor(rng.uniform(-1, 1, (2, s, s)))
    case("concat", lambda x: _weighted(T.concat(x, other, axis=0),
                                       np.random.default_rng(seed + 11)),
         rng.uniform(-1, 1, (3, s, s)))

    target = Tensor(rng.uniform(-1, 1, (2, s, s)))
    case("huber_loss", lambda x: L.huber_loss(x, target),
         rng.uniform(-0.8, 0.8, (2, s, s)))

    def off_nodes(values):
        # keep chrominance probes away from histogram grid nodes, where
        # the bilinear weights kink and finite differences break down
        u = (values + 1.0) * 10.0
        lo = np.floor(u)
        return (lo + 0.1 + 0.8 * (u - lo)) / 10.0 - 1.0

    hist_in = off_nodes(rng.uniform(-0.9, 0.9, (2, s, s)))
    hist_w = Tensor(rng.uniform(-1, 1, 441))
    case("soft_histogram", lambda x: (L.soft_histogram(x) * hist_w).sum(), hist_in,
         case_tol=max(tol, 1e-4))
    href = Tensor(L.soft_histogram(Tensor(rng.uniform(-0.5, 0.5, (2, s, s)))).data.copy())
    case("histogram_loss", lambda x: L.histogram_loss(L.soft_histogram(x), href), hist_in)

    case("tv_loss", lambda x: L.tv_loss(x), rng.uniform(-1, 1, (2, s, s)))

    disc = L.PatchDiscriminator(np.random.default_rng(seed + 12))
    case("patch_discriminator",
         lambda x: T.square(disc.forward(x)).sum(), rng.uniform(-1, 1, (3, 16, 16)))

    mod = att.init_module(8, heads=2, height=s, width=s, mode="axial", repeats=1,
                          span=None, rng=np.random.default_rng(seed + 13))
    f_r = Tensor(rng.uniform(0.05, 1, (8, s, s)))
    case("attention_module",
         lambda x: _weighted(att.axial_attention_module(x, f_r, mod),
                             np.random.default_rng(seed + 14)),
         rng.uniform(0.05, 1, (8, s, s)))

    full = att.init_full2d_layer(8, heads=2, height=s, width=s,
                                 rng=np.random.default_rng(seed + 15))
    for head in full.heads:
        for name in ("rq_h", "rq_w", "rk_h", "rk_w", "rv_h", "rv_w"):
            getattr(head, name).data[:] = rng.normal(0, 0.2, getattr(head, name).shape)
    case("attention_full_2d",
         lambda x: _weighted(att.attention_full_2d(x, f_r, full),
                             np.random.default_rng(seed + 16)),
         rng.uniform(0.05, 1, (8, s, s)))

    stage = DecoderStageParams.init(4, np.random.default_rng(seed + 17))
    fused = Tensor(rng.uniform(0.05, 1, (4, s, s)))
    skip = Tensor(rng.uniform(0.05, 1, (4, 2 * s, 2 * s)))
    case("decoder_stage",
         lambda x: _weighted(decoder_stage(x, fused, skip, stage),
                             np.random.default_rng(seed + 18)),
         rng.uniform(0.05, 1, (4, s, s)))

    head_p = PredictionHeadParams.init(4, 3, np.random.default_rng(seed + 19))
    case("prediction_head",
         lambda x: _weighted(prediction_head(x, head_p),
                             np.random.default_rng(seed + 20)),
         rng.uniform(0.05, 1, (4, s, s)))

    if inject_bug:
        from .tensor import _make

        def broken_square(x):
            return _make(x.data * x.data, (x,), lambda g: (3.0 * g * x.data,))

        case("injected_bug", lambda x: broken_square(x).sum(),
             rng.uniform(0.5, 1.0, (s,)))

    return checks
