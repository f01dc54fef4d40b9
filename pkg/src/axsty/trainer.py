"""Desk-scale optimisation: alternating discriminator/generator Adam
steps over target-reference pairs, with CSV loss logging and NTF1
checkpoints.

Backbone features are extracted once per pair and cached (the backbone
is frozen), so each step costs one generator forward/backward plus, when
the adversarial weight is non-zero, one discriminator round per scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .colorspace import LabImage
from .config import Config
from .decoder import ColorizationNet
from .losses import (LossBreakdown, LossWeights, PatchDiscriminator,
                     lsgan_losses, multiscale_ground_truth, total_loss)
from .ntf import read_ntf, write_ntf
from .tensor import ShapeError, Tensor

__all__ = ["AdamState", "adam_step", "TrainResult", "train_loop",
           "save_checkpoint", "load_checkpoint", "TrainingDiverged"]


class TrainingDiverged(RuntimeError):
    """A loss became non-finite; diagnostics were dumped."""


@dataclass
class AdamState:
    """Per-parameter moment buffers plus hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def from_config(cfg: Config) -> "AdamState":
        return AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, Tensor]:
    """One bias-corrected moment update, in place on the parameter data.

    Parameters without a gradient entry decay their moments and move by
    the decayed momentum only (equivalent to a zero gradient).
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, param {p.data.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(directory, tensors: dict[str, Tensor]) -> None:
    """A directory of NTF1 files plus a manifest of name, file, shape."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (name, tensor) in enumerate(sorted(tensors.items())):
        fname = f"t{i:04d}.ntf"
        write_ntf(directory / fname, tensor.data)
        rows.append(f"{name}\t{fname}\t{'x'.join(map(str, tensor.shape))}")
    (directory / "manifest.txt").write_text("\n".join(rows) + "\n")


def load_checkpoint(directory, tensors: dict[str, Tensor],
                    allow_extra: bool = False) -> None:
    """Restore parameter data in place; names and shapes must match.

    allow_extra skips checkpoint tensors the target set does not know
    (e.g. discriminator weights when loading just the generator).
    """
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} missing")
    seen = set()
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        name, fname, shape_s = line.split("\t")
        if name not in tensors:
            if allow_extra:
                continue
            raise ShapeError(f"checkpoint tensor {name} unknown to this network")
        arr = read_ntf(directory / fname).astype(np.float64)
        expected = tensors[name].shape
        if tuple(arr.shape) != expected:
            raise ShapeError(
                f"checkpoint tensor {name} has shape {arr.shape}, network expects {expected}")
        tensors[name].data[:] = arr
        seen.add(name)
    missing = set(tensors) - seen
    if missing:
        raise ShapeError(f"checkpoint missing tensors: {sorted(missing)[:5]} ...")


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    net: ColorizationNet
    discriminators: list[PatchDiscriminator] | None
    log_rows: list[dict]
    pixel_history: list[float]
    disc_history: list[float]
    gen_history: list[float]


def _zero_grads(tensors: dict[str, Tensor]) -> None:
    for t in tensors.values():
        t.zero_grad()


def _collect_grads(tensors: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: t.grad for name, t in tensors.items() if t.grad is not None}


def _dump_diagnostics(path, step, breakdown, params):
    lines = [f"diverged at step {step}", f"breakdown: {breakdown}"]
    for name, t in sorted(params.items()):
        lines.append(f"{name}\tnorm={np.linalg.norm(t.data):.6e}\t"
                     f"finite={bool(np.all(np.isfinite(t.data)))}")
    Path(path).write_text("\n".join(lines) + "\n")


def train_loop(pairs: list[tuple[LabImage, LabImage]], cfg: Config, steps: int,
               out_dir=None, log_path=None, rng: np.random.Generator | None = None,
               net: ColorizationNet | None = None) -> TrainResult:
    """Alternating optimisation over the given pairs.

    Each step draws one pair, takes a discriminator step on detached
    predictions (skipped when the adversarial weight is zero), then a
    generator step on the weighted multi-scale objective. Writes a CSV
    log row per scale per step (scale 0 aggregates) and a checkpoint at
    the end when out_dir is given. Aborts with diagnostics if any loss
    goes non-finite.
    """
    if not pairs:
        raise ValueError("train_loop needs at least one target-reference pair")
    cfg.validate()
    rng = rng or np.random.default_rng(cfg.seed)
    h, w = pairs[0][0].height, pairs[0][0].width

    net = net or ColorizationNet(cfg, h, w)
    gen_params = net.named_parameters()
    gen_state = AdamState.from_config(cfg)
    weights = LossWeights(pixel=cfg.w_pixel, hist=cfg.w_hist, tv=cfg.w_tv, gan=cfg.w_gan)

    use_gan = cfg.w_gan != 0.0
    discs: list[PatchDiscriminator | None] | None = None
    disc_params: dict[str, Tensor] = {}
    disc_state = AdamState.from_config(cfg)
    if use_gan:
        # one discriminator per scale that is big enough for the
        # three-layer stride-2 stack
        discs = []
        for l in range(cfg.scales):
            if min(h, w) // 2 ** l >= 8:
                discs.append(PatchDiscriminator(np.random.default_rng(cfg.seed + 101 + l)))
            else:
                discs.append(None)
        for l, d in enumerate(discs, start=1):
            if d is not None:
                disc_params.update(d.named_tensors(f"disc.scale{l}"))

    # frozen backbone: extract and pool ground truths once per pair
    prepared = []
    for target, reference in pairs:
        pyr_t, pyr_r = net.extract_pyramids(target, reference)
        t_scales = multiscale_ground_truth(target, cfg.scales)
        r_scales = multiscale_ground_truth(reference, cfg.scales)
        prepared.append((pyr_t, pyr_r, t_scales, r_scales))

    log_rows: list[dict] = []
    pixel_hist: list[float] = []
    disc_hist: list[float] = []
    gen_hist: list[float] = []

    for step in range(1, steps + 1):
        pyr_t, pyr_r, t_scales, r_scales = prepared[rng.integers(len(prepared))]

        preds = net.forward_from_pyramids(pyr_t, pyr_r)
        if not all(np.all(np.isfinite(p.data)) for p in preds):
            if out_dir:
                _dump_diagnostics(Path(out_dir) / "diverged.txt", step,
                                  "non-finite predictions", gen_params)
            raise TrainingDiverged(f"predictions non-finite at step {step}")

        disc_total = 0.0
        gen_logits = None
        if use_gan:
            # discriminator round on detached predictions
            _zero_grads(disc_params)
            d_loss_sum = None
            for i, pred in enumerate(preds):
                if discs[i] is None:
                    continue
                lum = t_scales[i].L.detach()
                real = T.concat(lum, t_scales[i].ab.detach(), axis=0)
                fake = T.concat(lum, pred.detach(), axis=0)
                l_d, _ = lsgan_losses(discs[i].forward(real), discs[i].forward(fake))
                d_loss_sum = l_d if d_loss_sum is None else d_loss_sum + l_d
            disc_total = d_loss_sum.item() if d_loss_sum is not None else 0.0
            if not np.isfinite(disc_total):
                if out_dir:
                    _dump_diagnostics(Path(out_dir) / "diverged.txt", step, disc_total,
                                      disc_params)
                raise TrainingDiverged(f"discriminator loss non-finite at step {step}")
            if d_loss_sum is not None:
                d_loss_sum.backward()
                adam_step(disc_params, _collect_grads(disc_params), disc_state)

            # fresh logits through the updated discriminator, tracked
            gen_logits = []
            for i, pred in enumerate(preds):
                if discs[i] is None:
                    gen_logits.append(None)
                    continue
                lum = t_scales[i].L.detach()
                gen_logits.append(discs[i].forward(T.concat(lum, pred, axis=0)))

        _zero_grads(gen_params)
        loss, breakdown = total_loss(
            preds, t_scales, r_scales, gen_logits, weights,
            huber_delta=cfg.huber_delta, hist_eps=cfg.hist_eps,
            hist_bins=cfg.hist_bins_per_axis)
        if not np.isfinite(breakdown.total):
            if out_dir:
                _dump_diagnostics(Path(out_dir) / "diverged.txt", step, breakdown, gen_params)
            raise TrainingDiverged(f"total loss non-finite at step {step}")
        loss.backward()
        adam_step(gen_params, _collect_grads(gen_params), gen_state)

        step_pixel = 0.0
        step_gen = 0.0
        for scale, terms in breakdown.scales.items():
            log_rows.append(dict(step=step, scale=scale, pixel=terms.pixel,
                                 hist=terms.hist, tv=terms.tv, gen=terms.gen,
                                 disc=0.0, total=(weights.pixel * terms.pixel
                                                  + weights.hist * terms.hist
                                                  + weights.tv * terms.tv
                                                  + weights.gan * terms.gen)))
            step_pixel += terms.pixel
            step_gen += terms.gen
        log_rows.append(dict(step=step, scale=0, pixel=step_pixel,
                             hist=sum(t.hist for t in breakdown.scales.values()),
                             tv=sum(t.tv for t in breakdown.scales.values()),
                             gen=step_gen, disc=disc_total, total=breakdown.total))
        pixel_hist.append(step_pixel)
        disc_hist.append(disc_total)
        gen_hist.append(step_gen)

    if log_path:
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "scale", "pixel", "hist",
                                                    "tv", "gen", "disc", "total"])
            writer.writeheader()
            writer.writerows(log_rows)
    if out_dir:
        tensors = dict(gen_params)
        tensors.update(disc_params)
        save_checkpoint(out_dir, tensors)

    return TrainResult(net=net, discriminators=discs, log_rows=log_rows,
                       pixel_history=pixel_hist, disc_history=disc_hist,
                       gen_history=gen_hist)
