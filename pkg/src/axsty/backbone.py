"""Multi-scale feature extraction and projection to the shared width h.

The production system would tap a large pretrained classifier; at desk
scale a small seeded convolutional stack stands in. Channel widths per
level follow the classic (64, 128, 256, 512, 512) schedule so that
externally computed features saved as NTF1 fixtures are drop-in
compatible. Backbone weights are frozen by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .ntf import read_ntf, write_ntf
from .tensor import ShapeError, Tensor

LEVEL_CHANNELS = (64, 128, 256, 512, 512)
N_LEVELS = 5


@dataclass
class FeaturePyramid:
    """Per-level activations plus the bottleneck for one input image.

    Level l has spatial size H/2^(l-1) x W/2^(l-1); the bottleneck
    shares level 5's spatial size.
    """

    levels: list[Tensor]
    bottleneck: Tensor

    def __post_init__(self):
        if len(self.levels) != N_LEVELS:
            raise ShapeError(f"pyramid needs {N_LEVELS} levels, got {len(self.levels)}")
        for i, (lvl, ch) in enumerate(zip(self.levels, LEVEL_CHANNELS), start=1):
            if lvl.ndim != 3 or lvl.shape[0] != ch:
                raise ShapeError(
                    f"level {i} must have {ch} channels, got shape {lvl.shape}")
            if i > 1:
                prev = self.levels[i - 2]
                if (prev.shape[1] != 2 * lvl.shape[1]) or (prev.shape[2] != 2 * lvl.shape[2]):
                    raise ShapeError(
                        f"level {i} must halve level {i - 1}: "
                        f"{prev.shape[1:]} -> {lvl.shape[1:]}")
        if self.bottleneck.shape[1:] != self.levels[-1].shape[1:]:
            raise ShapeError(
                f"bottleneck spatial size {self.bottleneck.shape[1:]} must equal "
                f"level 5's {self.levels[-1].shape[1:]}")

    @property
    def spatial_sizes(self) -> list[tuple[int, int]]:
        return [lvl.shape[1:] for lvl in self.levels]


def _he_conv(rng: np.random.Generator, k_out: int, c_in: int, k: int) -> np.ndarray:
    scale = np.sqrt(2.0 / (c_in * k * k))
    return rng.normal(0.0, scale, (k_out, c_in, k, k))


class ToyBackbone:
    """Five conv blocks with 2x average pooling between them.

    Each block is one 3x3 conv + relu whose activation is the level
    tap; block 5 adds a second conv + relu whose activation is the
    bottleneck. Deterministic for a given seed. Weights do not track
    gradients (frozen).
    """

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        c_prev = 3
        for ch in LEVEL_CHANNELS:
            self.weights.append(Tensor(_he_conv(rng, ch, c_prev, 3)))
            self.biases.append(Tensor(np.zeros(ch)))
            c_prev = ch
        self.bottleneck_w = Tensor(_he_conv(rng, LEVEL_CHANNELS[-1], c_prev, 3))
        self.bottleneck_b = Tensor(np.zeros(LEVEL_CHANNELS[-1]))

    def forward(self, x: Tensor) -> FeaturePyramid:
        if x.ndim != 3 or x.shape[0] != 3:
            raise ShapeError(f"backbone input must be [3,H,W], got {x.shape}")
        _, h, w = x.shape
        if h % 16 or w % 16:
            raise ShapeError(f"input {h}x{w} must be divisible by 16")
        levels = []
        cur = x
        for i in range(N_LEVELS):
            if i > 0:
                cur = T.avg_pool2x(cur)
            cur = T.relu(T.conv2d(cur, self.weights[i], self.biases[i]))
            levels.append(cur)
        bottleneck = T.relu(T.conv2d(cur, self.bottleneck_w, self.bottleneck_b))
        return FeaturePyramid(levels=levels, bottleneck=bottleneck)


# ---------------------------------------------------------------------------
# fixture pyramids
# ---------------------------------------------------------------------------


def save_fixture_pyramid(directory, pyramid: FeaturePyramid) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, lvl in enumerate(pyramid.levels, start=1):
        write_ntf(directory / f"level{i}.ntf", lvl.data)
    write_ntf(directory / "bottleneck.ntf", pyramid.bottleneck.data)


def load_fixture_pyramid(directory) -> FeaturePyramid:
    """Load externally computed features; shapes are validated against
    the declared channel schedule, naming the offending level."""
    directory = Path(directory)
    levels = []
    for i in range(1, N_LEVELS + 1):
        arr = read_ntf(directory / f"level{i}.ntf").astype(np.float64)
        if arr.ndim != 3 or arr.shape[0] != LEVEL_CHANNELS[i - 1]:
            raise ShapeError(
                f"fixture level {i}: expected {LEVEL_CHANNELS[i - 1]} channels, "
                f"got shape {arr.shape}")
        levels.append(Tensor(arr))
    bott = Tensor(read_ntf(directory / "bottleneck.ntf").astype(np.float64))
    return FeaturePyramid(levels=levels, bottleneck=bott)


# ---------------------------------------------------------------------------
# projection to the shared h-dimensional space
# ---------------------------------------------------------------------------


@dataclass
class ProjectionParams:
    """Per-level 1x1 conv weights mapping pyramid channels to width h."""

    level_w: list[Tensor]
    level_b: list[Tensor]
    bottleneck_w: Tensor
    bottleneck_b: Tensor

    @staticmethod
    def init(hidden_dim: int, rng: np.random.Generator) -> "ProjectionParams":
        lw, lb = [], []
        for ch in LEVEL_CHANNELS:
            lw.append(Tensor(_he_conv(rng, hidden_dim, ch, 1), requires_grad=True))
            lb.append(Tensor(np.zeros(hidden_dim), requires_grad=True))
        return ProjectionParams(
            level_w=lw, level_b=lb,
            bottleneck_w=Tensor(_he_conv(rng, hidden_dim, LEVEL_CHANNELS[-1], 1),
                                requires_grad=True),
            bottleneck_b=Tensor(np.zeros(hidden_dim), requires_grad=True))

    def named_tensors(self):
        for i, (w, b) in enumerate(zip(self.level_w, self.level_b), start=1):
            yield f"proj.level{i}.w", w
            yield f"proj.level{i}.b", b
        yield "proj.bottleneck.w", self.bottleneck_w
        yield "proj.bottleneck.b", self.bottleneck_b


def project_features(pyramid: FeaturePyramid, params: ProjectionParams
                     ) -> tuple[list[Tensor], Tensor]:
    """1x1 conv + relu per level; returns (projected levels, projected
    bottleneck), all with the shared channel count."""
    levels = [T.relu(T.conv2d(lvl, w, b))
              for lvl, w, b in zip(pyramid.levels, params.level_w, params.level_b)]
    bott = T.relu(T.conv2d(pyramid.bottleneck, params.bottleneck_w, params.bottleneck_b))
    return levels, bott
