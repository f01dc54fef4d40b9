"""Attention layers that transfer reference style onto target content.

Two realisations of the same scoring rule live here:

* ``axial_attention_1d`` factorises attention into per-row (width) or
  per-column (height) passes, costing O(H*W*m) for span m;
* ``attention_full_2d`` attends over the whole 2-D lattice at
  O(H*W*m^2) and doubles as the correctness oracle target and the
  "standard attention" configuration.

Scores combine content similarity q.k with learned relative-offset
encodings: q.r_q(p-o) and k.r_k(p-o) are added to the logits, and
r_v(p-o) is added to the mixed values. Offset tables are per head and
per axis with 2m-1 entries for offsets in [-(m-1), m-1]; in the full
2-D case the encoding of a 2-D offset is the sum of its height-axis
and width-axis entries.

Queries come from the target source, keys and values from the
reference source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

__all__ = [
    "AxialHeadParams",
    "AxialLayerParams",
    "Full2DHeadParams",
    "Full2DLayerParams",
    "AttentionModuleParams",
    "ModuleStageParams",
    "window_indices",
    "axial_attention_1d",
    "attention_full_2d",
    "axial_attention_module",
    "attention_flop_count",
    "init_axial_layer",
    "init_full2d_layer",
    "init_module",
]


def window_indices(length: int, span: int) -> tuple[np.ndarray, np.ndarray]:
    """Attended positions and offset-table indices for a 1-D axis.

    Each query o attends a window of exactly ``span`` consecutive
    positions centred on o and shifted to stay inside the axis, so
    span == length means every query attends the whole axis. Returns
    (positions [L, span], table_idx [L, span]) where table_idx maps the
    offset p - o into [0, 2*span - 2].
    """
    if span > length:
        raise ShapeError(f"span {span} exceeds axis length {length}")
    if span < 1:
        raise ShapeError(f"span must be >= 1, got {span}")
    starts = np.clip(np.arange(length) - span // 2, 0, length - span)
    positions = starts[:, None] + np.arange(span)[None, :]
    table_idx = positions - np.arange(length)[:, None] + span - 1
    return positions, table_idx


@dataclass
class AxialHeadParams:
    """One head of a single-axis layer: projections and offset tables."""

    wq: Tensor  # [d, h]
    wk: Tensor
    wv: Tensor
    rq: Tensor  # [d, 2m-1]
    rk: Tensor
    rv: Tensor

    def named_tensors(self, prefix: str):
        for name in ("wq", "wk", "wv", "rq", "rk", "rv"):
            yield f"{prefix}.{name}", getattr(self, name)


@dataclass
class AxialLayerParams:
    heads: list[AxialHeadParams]
    out_w: Tensor  # [h, N*d]
    out_b: Tensor  # [h]
    span: int

    def named_tensors(self, prefix: str):
        for n, head in enumerate(self.heads):
            yield from head.named_tensors(f"{prefix}.head{n}")
        yield f"{prefix}.out.w", self.out_w
        yield f"{prefix}.out.b", self.out_b


@dataclass
class Full2DHeadParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    rq_h: Tensor  # [d, 2H-1]
    rq_w: Tensor  # [d, 2W-1]
    rk_h: Tensor
    rk_w: Tensor
    rv_h: Tensor
    rv_w: Tensor

    def named_tensors(self, prefix: str):
        for name in ("wq", "wk", "wv", "rq_h", "rq_w", "rk_h", "rk_w", "rv_h", "rv_w"):
            yield f"{prefix}.{name}", getattr(self, name)


@dataclass
class Full2DLayerParams:
    heads: list[Full2DHeadParams]
    out_w: Tensor
    out_b: Tensor

    def named_tensors(self, prefix: str):
        for n, head in enumerate(self.heads):
            yield from head.named_tensors(f"{prefix}.head{n}")
        yield f"{prefix}.out.w", self.out_w
        yield f"{prefix}.out.b", self.out_b


def _project(weight: Tensor, feat: Tensor) -> Tensor:
    h, height, width = feat.shape
    flat = feat.reshape(h, height * width)
    return T.matmul(weight, flat).reshape(weight.shape[0], height, width)


def _output_projection(head_outs: list[Tensor], out_w: Tensor, out_b: Tensor,
                       height: int, width: int) -> Tensor:
    merged = T.concat_n(head_outs, axis=0)  # [N*d, H, W]
    flat = merged.reshape(merged.shape[0], height * width)
    out = T.matmul(out_w, flat)
    bias = out_b.reshape(out_b.shape[0], 1)
    ones = Tensor(np.ones((1, height * width)))
    return (out + T.matmul(bias, ones)).reshape(out_w.shape[0], height, width)


def axial_attention_1d(f_t: Tensor, f_r: Tensor, params: AxialLayerParams,
                       axis: str = "width") -> Tensor:
    """Multi-head attention along one axis of the lattice.

    Every row (axis="width") or column (axis="height") is attended
    independently; query o mixes the reference values at the span-m
    window around o on its own line.
    """
    if f_t.shape != f_r.shape:
        raise ShapeError(f"target {f_t.shape} and reference {f_r.shape} shapes differ")
    if axis not in ("width", "height"):
        raise ShapeError(f"axis must be width or height, got {axis!r}")
    if axis == "height":
        out = axial_attention_1d(T.transpose(f_t, (0, 2, 1)), T.transpose(f_r, (0, 2, 1)),
                                 params, axis="width")
        return T.transpose(out, (0, 2, 1))

    _, height, width = f_t.shape
    positions, table_idx = window_indices(width, params.span)
    head_outs = []
    for head in params.heads:
        expected = 2 * params.span - 1
        if head.rq.shape[1] != expected:
            raise ShapeError(
                f"offset table has {head.rq.shape[1]} entries, span {params.span} needs {expected}")
        q = _project(head.wq, f_t)   # [d, H, W]
        k = _project(head.wk, f_r)
        v = _project(head.wv, f_r)

        kg = T.take_last(k, positions)           # [d, H, W, m]
        vg = T.take_last(v, positions)
        content = T.einsum2("dro,droj->roj", q, kg)

        qr = T.einsum2("dro,dt->rot", q, head.rq)          # [H, W, 2m-1]
        score_q = T.take_pairs(qr, table_idx)              # [H, W, m]
        rk_g = T.take_last(head.rk, table_idx)             # [d, W, m]
        score_k = T.einsum2("droj,doj->roj", kg, rk_g)

        attn = T.softmax(content + score_q + score_k, axis=-1)

        mixed = T.einsum2("roj,droj->dro", attn, vg)
        rv_g = T.take_last(head.rv, table_idx)             # [d, W, m]
        mixed = mixed + T.einsum2("roj,doj->dro", attn, rv_g)
        head_outs.append(mixed)

    return _output_projection(head_outs, params.out_w, params.out_b, height, width)


def _lattice_offset_indices(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    n = height * width
    rows = np.repeat(np.arange(height), width)
    cols = np.tile(np.arange(width), height)
    ti = rows[None, :] - rows[:, None] + height - 1  # [N, N] height offsets
    tj = cols[None, :] - cols[:, None] + width - 1
    return ti.reshape(n, n), tj.reshape(n, n)


def attention_full_2d(f_t: Tensor, f_r: Tensor, params: Full2DLayerParams) -> Tensor:
    """Standard attention over the whole 2-D lattice.

    For each output position o the logits against every lattice
    position p combine content scores with per-axis relative encodings;
    the softmax-weighted sum mixes reference values plus their offset
    encodings.
    """
    if f_t.shape != f_r.shape:
        raise ShapeError(f"target {f_t.shape} and reference {f_r.shape} shapes differ")
    _, height, width = f_t.shape
    n = height * width
    ti, tj = _lattice_offset_indices(height, width)
    head_outs = []
    for head in params.heads:
        q = T.matmul(head.wq, f_t.reshape(f_t.shape[0], n))  # [d, N]
        k = T.matmul(head.wk, f_r.reshape(f_r.shape[0], n))
        v = T.matmul(head.wv, f_r.reshape(f_r.shape[0], n))

        content = T.einsum2("do,dp->op", q, k)
        qr_h = T.einsum2("do,dt->ot", q, head.rq_h)
        qr_w = T.einsum2("do,dt->ot", q, head.rq_w)
        score_q = T.take_pairs(qr_h, ti) + T.take_pairs(qr_w, tj)
        kr_h = T.einsum2("dp,dt->pt", k, head.rk_h)
        kr_w = T.einsum2("dp,dt->pt", k, head.rk_w)
        score_k = T.take_pairs_swapped(kr_h, ti) + T.take_pairs_swapped(kr_w, tj)

        attn = T.softmax(content + score_q + score_k, axis=-1)  # [N, N]

        mixed = T.einsum2("op,dp->do", attn, v)
        mixed = mixed + T.offset_bin_mix(attn, ti, head.rv_h)
        mixed = mixed + T.offset_bin_mix(attn, tj, head.rv_w)
        head_outs.append(mixed.reshape(mixed.shape[0], height, width))

    return _output_projection(head_outs, params.out_w, params.out_b, height, width)


# ---------------------------------------------------------------------------
# the style-transfer fusion module
# ---------------------------------------------------------------------------


@dataclass
class ModuleStageParams:
    """One application of the fusion module: entry normalisation of both
    sources, the attention pass, and the residual merge."""

    bn_t_gamma: Tensor
    bn_t_beta: Tensor
    bn_r_gamma: Tensor
    bn_r_beta: Tensor
    width: AxialLayerParams | None = None
    height: AxialLayerParams | None = None
    full: Full2DLayerParams | None = None

    def named_tensors(self, prefix: str):
        yield f"{prefix}.bn_t.gamma", self.bn_t_gamma
        yield f"{prefix}.bn_t.beta", self.bn_t_beta
        yield f"{prefix}.bn_r.gamma", self.bn_r_gamma
        yield f"{prefix}.bn_r.beta", self.bn_r_beta
        if self.full is not None:
            yield from self.full.named_tensors(f"{prefix}.full")
        else:
            yield from self.width.named_tensors(f"{prefix}.width")
            yield from self.height.named_tensors(f"{prefix}.height")


@dataclass
class AttentionModuleParams:
    stages: list[ModuleStageParams]

    def named_tensors(self, prefix: str):
        for i, stage in enumerate(self.stages):
            yield from stage.named_tensors(f"{prefix}.rep{i}")


def _stage_forward(f_t: Tensor, f_r: Tensor, stage: ModuleStageParams) -> Tensor:
    t_n = T.relu(T.batch_norm(f_t, stage.bn_t_gamma, stage.bn_t_beta))
    r_n = T.relu(T.batch_norm(f_r, stage.bn_r_gamma, stage.bn_r_beta))
    if stage.full is not None:
        fused = attention_full_2d(t_n, r_n, stage.full)
    else:
        along_width = axial_attention_1d(t_n, r_n, stage.width, axis="width")
        fused = axial_attention_1d(along_width, r_n, stage.height, axis="height")
    return T.relu(f_t + fused)


def axial_attention_module(f_t: Tensor, f_r: Tensor,
                           params: AttentionModuleParams) -> Tensor:
    """Fuse reference style into target features at one pyramid level.

    Each stage normalises both sources, runs the attention pass
    (width-then-height axial layers, or one full-2D layer), and adds the
    result onto the unnormalised target identity before a final relu.
    With two stages the second consumes the first's output as its
    target, against the original reference.
    """
    out = f_t
    for stage in params.stages:
        out = _stage_forward(out, f_r, stage)
    return out


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------


def _linear_init(rng, rows, cols):
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(cols), (rows, cols)), requires_grad=True)


def _zero_table(d, span):
    # offset tables start at zero: pure content attention
    return Tensor(np.zeros((d, 2 * span - 1)), requires_grad=True)


def init_axial_layer(hidden: int, heads: int, span: int,
                     rng: np.random.Generator) -> AxialLayerParams:
    d = hidden // heads
    head_params = [
        AxialHeadParams(
            wq=_linear_init(rng, d, hidden),
            wk=_linear_init(rng, d, hidden),
            wv=_linear_init(rng, d, hidden),
            rq=_zero_table(d, span), rk=_zero_table(d, span), rv=_zero_table(d, span))
        for _ in range(heads)
    ]
    return AxialLayerParams(
        heads=head_params,
        out_w=_linear_init(rng, hidden, heads * d),
        out_b=Tensor(np.zeros(hidden), requires_grad=True),
        span=span)


def init_full2d_layer(hidden: int, heads: int, height: int, width: int,
                      rng: np.random.Generator) -> Full2DLayerParams:
    d = hidden // heads
    head_params = [
        Full2DHeadParams(
            wq=_linear_init(rng, d, hidden),
            wk=_linear_init(rng, d, hidden),
            wv=_linear_init(rng, d, hidden),
            rq_h=_zero_table(d, height), rq_w=_zero_table(d, width),
            rk_h=_zero_table(d, height), rk_w=_zero_table(d, width),
            rv_h=_zero_table(d, height), rv_w=_zero_table(d, width))
        for _ in range(heads)
    ]
    return Full2DLayerParams(
        heads=head_params,
        out_w=_linear_init(rng, hidden, heads * d),
        out_b=Tensor(np.zeros(hidden), requires_grad=True))


def init_module(hidden: int, heads: int, height: int, width: int, mode: str,
                repeats: int, span: int | None, rng: np.random.Generator
                ) -> AttentionModuleParams:
    stages = []
    for _ in range(repeats):
        bn = dict(
            bn_t_gamma=Tensor(np.ones(hidden), requires_grad=True),
            bn_t_beta=Tensor(np.zeros(hidden), requires_grad=True),
            bn_r_gamma=Tensor(np.ones(hidden), requires_grad=True),
            bn_r_beta=Tensor(np.zeros(hidden), requires_grad=True))
        if mode == "full":
            stages.append(ModuleStageParams(
                **bn, full=init_full2d_layer(hidden, heads, height, width, rng)))
        else:
            stages.append(ModuleStageParams(
                **bn,
                width=init_axial_layer(hidden, heads, span or width, rng),
                height=init_axial_layer(hidden, heads, span or height, rng)))
    return AttentionModuleParams(stages=stages)


# ---------------------------------------------------------------------------
# cost model
# ---------------------------------------------------------------------------


def attention_flop_count(height: int, width: int, m: int, mode: str,
                         heads: int = 8, d_head: int = 32) -> int:
    """Multiply-accumulate count of one attention layer's score and mix
    stages: every query scores (q.k, q.r_q, k.r_k) and mixes values over
    m attended positions per query in axial mode, m*m in full mode.
    """
    if mode not in ("axial", "full"):
        raise ValueError(f"mode must be axial or full, got {mode!r}")
    positions = m if mode == "axial" else m * m
    per_pair = 4 * d_head  # three score dot products + value mix
    return height * width * positions * per_pair * heads
