"""Pyramid decoder, prediction heads, and the assembled network.

Decoding starts from the projected bottleneck at 1/16 resolution and
walks the pyramid back up. Stage l (l = 4..1) adds the fused features
of the coarser level onto the running volume, refines with a 3x3 conv
+ relu, upsamples 2x, concatenates the projected target features of
level l as the skip connection, and projects the doubled channel count
back to h with another 3x3 conv + relu. A prediction head turns each
stage output into two chrominance channels through an e-wide 3x3 conv
+ relu and a 1x1 conv + tanh, so predictions always lie in (-1, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionModuleParams, axial_attention_module, init_module
from .backbone import (FeaturePyramid, ProjectionParams, ToyBackbone,
                       load_fixture_pyramid, project_features)
from .colorspace import LabImage, replicate_luma
from .config import Config
from .tensor import ShapeError, Tensor

N_LEVELS = 5


@dataclass
class DecoderStageParams:
    """Pre-fusion conv (h->h) and post-concat conv (2h->h) of one stage."""

    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor

    @staticmethod
    def init(hidden: int, rng: np.random.Generator) -> "DecoderStageParams":
        def he(k_out, c_in):
            scale = np.sqrt(2.0 / (c_in * 9))
            return Tensor(rng.normal(0, scale, (k_out, c_in, 3, 3)), requires_grad=True)

        return DecoderStageParams(
            conv1_w=he(hidden, hidden),
            conv1_b=Tensor(np.zeros(hidden), requires_grad=True),
            conv2_w=he(hidden, 2 * hidden),
            conv2_b=Tensor(np.zeros(hidden), requires_grad=True))

    def named_tensors(self, prefix: str):
        yield f"{prefix}.conv1.w", self.conv1_w
        yield f"{prefix}.conv1.b", self.conv1_b
        yield f"{prefix}.conv2.w", self.conv2_w
        yield f"{prefix}.conv2.b", self.conv2_b


@dataclass
class PredictionHeadParams:
    conv1_w: Tensor  # [e, h, 3, 3]
    conv1_b: Tensor
    conv2_w: Tensor  # [2, e, 1, 1]
    conv2_b: Tensor

    @staticmethod
    def init(hidden: int, head_dim: int, rng: np.random.Generator) -> "PredictionHeadParams":
        return PredictionHeadParams(
            conv1_w=Tensor(rng.normal(0, np.sqrt(2.0 / (hidden * 9)), (head_dim, hidden, 3, 3)),
                           requires_grad=True),
            conv1_b=Tensor(np.zeros(head_dim), requires_grad=True),
            conv2_w=Tensor(rng.normal(0, np.sqrt(1.0 / head_dim), (2, head_dim, 1, 1)),
                           requires_grad=True),
            conv2_b=Tensor(np.zeros(2), requires_grad=True))

    def named_tensors(self, prefix: str):
        yield f"{prefix}.conv1.w", self.conv1_w
        yield f"{prefix}.conv1.b", self.conv1_b
        yield f"{prefix}.conv2.w", self.conv2_w
        yield f"{prefix}.conv2.b", self.conv2_b


@dataclass
class PredictionSet:
    """Chrominance predictions at scales 1..4; level 1 is full resolution
    and each deeper level halves it."""

    levels: list[Tensor]

    def __post_init__(self):
        for i, p in enumerate(self.levels, start=1):
            if p.ndim != 3 or p.shape[0] != 2:
                raise ShapeError(f"prediction {i} must be [2,H,W], got {p.shape}")
            if i > 1:
                prev = self.levels[i - 2]
                if prev.shape[1] != 2 * p.shape[1] or prev.shape[2] != 2 * p.shape[2]:
                    raise ShapeError(
                        f"prediction {i} must halve prediction {i - 1}: "
                        f"{prev.shape} vs {p.shape}")

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)


def decoder_stage(o_prev: Tensor, fused: Tensor, skip: Tensor,
                  params: DecoderStageParams) -> Tensor:
    """One five-step decode: add fused, conv3x3+relu, upsample 2x,
    concat skip, conv3x3+relu back to h channels."""
    if fused.shape != o_prev.shape:
        raise ShapeError(f"fused {fused.shape} must match decoder input {o_prev.shape}")
    x = T.relu(T.conv2d(o_prev + fused, params.conv1_w, params.conv1_b))
    x = T.upsample2x(x)
    if skip.shape[1:] != x.shape[1:]:
        raise ShapeError(f"skip {skip.shape} must have double spatial size of {o_prev.shape}")
    x = T.concat(x, skip, axis=0)
    return T.relu(T.conv2d(x, params.conv2_w, params.conv2_b))


def prediction_head(features: Tensor, params: PredictionHeadParams) -> Tensor:
    x = T.relu(T.conv2d(features, params.conv1_w, params.conv1_b))
    return T.tanh(T.conv2d(x, params.conv2_w, params.conv2_b))


class ColorizationNet:
    """The full target+reference to multi-scale chrominance mapping.

    Backbone features are extracted (or injected as fixtures), projected
    to the shared width, fused by attention modules from ``from_block``
    up, and decoded through four stages with prediction heads. The
    backbone is frozen; everything else trains.
    """

    def __init__(self, cfg: Config, height: int, width: int):
        cfg.validate()
        if height % 16 or width % 16:
            raise ShapeError(f"input {height}x{width} must be divisible by 16")
        self.cfg = cfg
        self.height = height
        self.width = width
        rng = np.random.default_rng(cfg.seed)
        self.backbone = ToyBackbone(seed=cfg.backbone_seed)
        self.projection = ProjectionParams.init(cfg.hidden_dim, rng)

        # attended levels: from_block..5; spans sized to each level's lattice
        self.attention_modules: dict[int, AttentionModuleParams] = {}
        for level in range(cfg.from_block, N_LEVELS + 1):
            lh = height // 2 ** (level - 1)
            lw = width // 2 ** (level - 1)
            self.attention_modules[level] = init_module(
                cfg.hidden_dim, cfg.heads, lh, lw, cfg.attention_mode,
                cfg.repeats, cfg.span, rng)

        self.stages = {l: DecoderStageParams.init(cfg.hidden_dim, rng) for l in (4, 3, 2, 1)}
        self.heads = {l: PredictionHeadParams.init(cfg.hidden_dim, cfg.head_dim, rng)
                      for l in (1, 2, 3, 4)}

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.projection.named_tensors())
        for level, mod in self.attention_modules.items():
            out.update(mod.named_tensors(f"attn.level{level}"))
        for l, st in self.stages.items():
            out.update(st.named_tensors(f"dec.stage{l}"))
        for l, hd in self.heads.items():
            out.update(hd.named_tensors(f"head.level{l}"))
        return out

    # -- feature plumbing ------------------------------------------------------

    def extract_pyramids(self, target: LabImage, reference: LabImage
                         ) -> tuple[FeaturePyramid, FeaturePyramid]:
        """Frozen-backbone features for both inputs. The target feeds its
        triplicated luminance; the reference feeds its Lab volume."""
        if self.cfg.backbone_mode == "fixture":
            base = self.cfg.fixture_dir
            if base is None:
                raise ShapeError("backbone_mode=fixture requires fixture_dir")
            return (load_fixture_pyramid(f"{base}/target"),
                    load_fixture_pyramid(f"{base}/reference"))
        t_in = replicate_luma(target.L).detach()
        r_in = reference.lab().detach()
        return self.backbone.forward(t_in), self.backbone.forward(r_in)

    def forward_from_pyramids(self, pyr_t: FeaturePyramid, pyr_r: FeaturePyramid
                              ) -> PredictionSet:
        cfg = self.cfg
        proj_t, bottleneck = project_features(pyr_t, self.projection)
        proj_r, _ = project_features(pyr_r, self.projection)

        fused: dict[int, Tensor] = {}
        for level in range(2, N_LEVELS + 1):  # level-1 fusion is never consumed
            if level >= cfg.from_block:
                fused[level] = axial_attention_module(
                    proj_t[level - 1], proj_r[level - 1], self.attention_modules[level])
            else:
                fused[level] = proj_t[level - 1]

        out = bottleneck  # running decoder volume, starts at level-5 resolution
        preds: dict[int, Tensor] = {}
        for l in (4, 3, 2, 1):
            out = decoder_stage(out, fused[l + 1], proj_t[l - 1], self.stages[l])
            preds[l] = prediction_head(out, self.heads[l])
        return PredictionSet(levels=[preds[1], preds[2], preds[3], preds[4]])

    def forward(self, target: LabImage, reference: LabImage) -> PredictionSet:
        if (target.height, target.width) != (reference.height, reference.width):
            raise ShapeError("target and reference sizes differ")
        if (target.height, target.width) != (self.height, self.width):
            raise ShapeError(
                f"network built for {self.height}x{self.width}, "
                f"got {target.height}x{target.width}")
        pyr_t, pyr_r = self.extract_pyramids(target, reference)
        return self.forward_from_pyramids(pyr_t, pyr_r)


def network_forward(target: LabImage, reference: LabImage, net: ColorizationNet
                    ) -> PredictionSet:
    return net.forward(target, reference)
