"""Span-scaling benchmark for the attention layers.

Holds the lattice fixed and grows the attended span m, timing one
forward layer pass per mode in float32. The axial layer is the
production code path; the full mode runs a forward-only windowed
kernel that accumulates one shifted-product slab per 2-D offset
(m*m slabs), which keeps memory flat while preserving the m^2 work
scaling. Measured log-log slopes against m are the acceptance
property: near 1 for axial, near 2 for full.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .attention import attention_flop_count, init_axial_layer
from .tensor import Tensor

__all__ = ["BenchRow", "run_benchmark", "fit_loglog_slope",
           "windowed_full_forward"]


@dataclass
class BenchRow:
    mode: str
    m: int
    flops: int
    wall_ms: float


def _offset_slices(di: int, dj: int, height: int, width: int):
    dst = (slice(max(0, -di), height - max(0, di)),
           slice(max(0, -dj), width - max(0, dj)))
    src = (slice(max(0, di), height + min(0, di)),
           slice(max(0, dj), width + min(0, dj)))
    return dst, src


def windowed_full_forward(f_t: np.ndarray, f_r: np.ndarray, heads: list[dict],
                          span: int) -> np.ndarray:
    """Full-2D attention restricted to the centred span x span offset
    window, forward only. Border queries mask the offsets that leave the
    lattice. One slab of shifted products per offset keeps peak memory
    at O(m^2 + H*W) instead of O(H*W*m^2)."""
    _, height, width = f_t.shape
    offsets = [(di, dj)
               for di in range(-(span // 2), span - span // 2)
               for dj in range(-(span // 2), span - span // 2)]
    outs = []
    for head in heads:
        d = head["wq"].shape[0]
        q = (head["wq"] @ f_t.reshape(f_t.shape[0], -1)).reshape(d, height, width)
        k = (head["wk"] @ f_r.reshape(f_r.shape[0], -1)).reshape(d, height, width)
        v = (head["wv"] @ f_r.reshape(f_r.shape[0], -1)).reshape(d, height, width)

        logits = np.full((len(offsets), height, width), -np.inf, dtype=f_t.dtype)
        for idx, (di, dj) in enumerate(offsets):
            dst, src = _offset_slices(di, dj, height, width)
            rq = head["rq_h"][:, di + span - 1] + head["rq_w"][:, dj + span - 1]
            rk = head["rk_h"][:, di + span - 1] + head["rk_w"][:, dj + span - 1]
            k_win = k[:, src[0], src[1]]
            logits[idx, dst[0], dst[1]] = (
                np.einsum("dij,dij->ij", q[:, dst[0], dst[1]], k_win)
                + np.einsum("dij,d->ij", q[:, dst[0], dst[1]], rq)
                + np.einsum("dij,d->ij", k_win, rk))

        logits -= logits.max(axis=0, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=0, keepdims=True)

        out = np.zeros((d, height, width), dtype=f_t.dtype)
        for idx, (di, dj) in enumerate(offsets):
            dst, src = _offset_slices(di, dj, height, width)
            rv = head["rv_h"][:, di + span - 1] + head["rv_w"][:, dj + span - 1]
            out[:, dst[0], dst[1]] += logits[idx, dst[0], dst[1]] * (
                v[:, src[0], src[1]] + rv[:, None, None])
        outs.append(out)
    merged = np.concatenate(outs, axis=0).reshape(-1, height * width)
    return merged.reshape(-1, height, width)


def _axial_callable(hidden, heads, span, lattice, rng):
    layer = init_axial_layer(hidden, heads, span, rng)
    for head in layer.heads:
        for name in ("rq", "rk", "rv"):
            getattr(head, name).data[:] = rng.normal(0, 0.1, getattr(head, name).shape)
    # benchmark mode is float32 and grad-free throughout
    for _, t in layer.named_tensors("bench"):
        t.data = t.data.astype(np.float32)
        t.requires_grad = False
    f_t = Tensor(rng.normal(0, 1, (hidden, lattice, lattice)).astype(np.float32))
    f_r = Tensor(rng.normal(0, 1, (hidden, lattice, lattice)).astype(np.float32))

    def run():
        from .attention import axial_attention_1d
        return axial_attention_1d(f_t, f_r, layer, axis="width")

    return run


def _full_callable(hidden, heads, span, lattice, rng):
    d = hidden // heads
    head_arrays = []
    for _ in range(heads):
        head_arrays.append({
            "wq": rng.normal(0, 1, (d, hidden)).astype(np.float32),
            "wk": rng.normal(0, 1, (d, hidden)).astype(np.float32),
            "wv": rng.normal(0, 1, (d, hidden)).astype(np.float32),
            "rq_h": rng.normal(0, 0.1, (d, 2 * span - 1)).astype(np.float32),
            "rq_w": rng.normal(0, 0.1, (d, 2 * span - 1)).astype(np.float32),
            "rk_h": rng.normal(0, 0.1, (d, 2 * span - 1)).astype(np.float32),
            "rk_w": rng.normal(0, 0.1, (d, 2 * span - 1)).astype(np.float32),
            "rv_h": rng.normal(0, 0.1, (d, 2 * span - 1)).astype(np.float32),
            "rv_w": rng.normal(0, 0.1, (d, 2 * span - 1)).astype(np.float32)})
    f_t = rng.normal(0, 1, (hidden, lattice, lattice)).astype(np.float32)
    f_r = rng.normal(0, 1, (hidden, lattice, lattice)).astype(np.float32)

    def run():
        return windowed_full_forward(f_t, f_r, head_arrays, span)

    return run


def run_benchmark(mode: str, sizes: list[int], heads: int = 2, hidden: int = 16,
                  lattice: int = 64, repeats: int = 3, seed: int = 0) -> list[BenchRow]:
    """Time one attention layer per span in ``sizes`` on a fixed lattice.

    Spans must not exceed the lattice side. Measurement rounds are
    interleaved across spans (after a warmup round) and the minimum per
    span is kept, so allocator growth or clock drift hits every span
    alike instead of skewing the fitted slope.
    """
    if mode not in ("axial", "full"):
        raise ValueError(f"mode must be axial or full, got {mode!r}")
    make = _axial_callable if mode == "axial" else _full_callable
    fns = {}
    for m in sizes:
        if m > lattice:
            raise ValueError(f"span {m} exceeds lattice {lattice}")
        fns[m] = make(hidden, heads, m, lattice, np.random.default_rng(seed))
    best = {m: np.inf for m in sizes}
    for rnd in range(repeats + 1):  # round 0 warms up, unrecorded
        for m in sizes:
            t0 = time.perf_counter()
            fns[m]()
            if rnd > 0:
                best[m] = min(best[m], time.perf_counter() - t0)
    return [BenchRow(mode=mode, m=m,
                     flops=attention_flop_count(lattice, lattice, m, mode,
                                                heads=heads, d_head=hidden // heads),
                     wall_ms=best[m] * 1e3)
            for m in sizes]


def fit_loglog_slope(sizes, values) -> float:
    """Least-squares slope of log(values) against log(sizes)."""
    xs = np.log(np.asarray(sizes, dtype=np.float64))
    ys = np.log(np.asarray(values, dtype=np.float64))
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)
