"""Runtime configuration: reference defaults plus key=value file parsing.

Defaults follow the published training recipe (8 heads, hidden width
256, head width 64, loss weights 100/2/50/1, attention from block 3),
except the learning rate, which defaults to 1e-3 for desk-scale
overfit runs; set optim.lr=1e-5 to recover the reference value.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path


@dataclass
class Config:
    # architecture
    hidden_dim: int = 256          # shared projection width h
    head_dim: int = 64             # prediction-head width e
    heads: int = 8
    attention_mode: str = "axial"  # axial | full
    repeats: int = 2               # module applications per level
    span: int | None = None        # None = full axis
    from_block: int = 3            # first backbone level with attention
    scales: int = 4                # decoded prediction scales

    # backbone
    backbone_mode: str = "toy"     # toy | fixture
    backbone_seed: int = 0
    fixture_dir: str | None = None

    # losses
    w_pixel: float = 100.0
    w_hist: float = 2.0
    w_tv: float = 50.0
    w_gan: float = 1.0
    hist_bins_per_axis: int = 21   # 441 joint ab bins
    hist_eps: float = 1e-5
    huber_delta: float = 1.0

    # optimiser
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    # misc
    seed: int = 0

    def validate(self) -> "Config":
        if self.hidden_dim % self.heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.attention_mode not in ("axial", "full"):
            raise ValueError(f"attention_mode must be axial or full, got {self.attention_mode!r}")
        if self.repeats not in (1, 2):
            raise ValueError(f"repeats must be 1 or 2, got {self.repeats}")
        if not 1 <= self.from_block <= 5:
            raise ValueError(f"from_block must be in 1..5, got {self.from_block}")
        if self.backbone_mode not in ("toy", "fixture"):
            raise ValueError(f"backbone_mode must be toy or fixture, got {self.backbone_mode!r}")
        return self

    @property
    def d_head(self) -> int:
        return self.hidden_dim // self.heads

    @property
    def hist_bins(self) -> int:
        return self.hist_bins_per_axis ** 2


# dotted config-file keys -> Config field
_KEY_MAP = {
    "attention.heads": "heads",
    "attention.mode": "attention_mode",
    "attention.repeats": "repeats",
    "attention.span": "span",
    "attention.from_block": "from_block",
    "model.hidden_dim": "hidden_dim",
    "model.head_dim": "head_dim",
    "model.scales": "scales",
    "backbone.mode": "backbone_mode",
    "backbone.seed": "backbone_seed",
    "backbone.fixture_dir": "fixture_dir",
    "loss.pixel": "w_pixel",
    "loss.hist": "w_hist",
    "loss.tv": "w_tv",
    "loss.gan": "w_gan",
    "loss.hist_eps": "hist_eps",
    "loss.huber_delta": "huber_delta",
    "optim.lr": "lr",
    "optim.beta1": "beta1",
    "optim.beta2": "beta2",
    "optim.eps": "adam_eps",
    "seed": "seed",
}

_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(name: str, raw: str):
    raw = raw.strip()
    ftype = _FIELD_TYPES[name]
    if raw.lower() in ("none", "auto", ""):
        return None
    if "int" in ftype and "None" in ftype:
        return int(raw)
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    if "str" in ftype:
        return raw
    raise ValueError(f"cannot coerce config field {name} of type {ftype}")


def load_config(path, base: Config | None = None) -> Config:
    """Parse a key=value text file; # starts a comment, blanks ignored."""
    cfg = base or Config()
    overrides = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KEY_MAP:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        overrides[_KEY_MAP[key]] = _coerce(_KEY_MAP[key], raw)
    return replace(cfg, **overrides).validate()


def save_config(path, cfg: Config) -> None:
    inverse = {v: k for k, v in _KEY_MAP.items()}
    lines = []
    for f in fields(cfg):
        if f.name not in inverse:
            continue
        val = getattr(cfg, f.name)
        lines.append(f"{inverse[f.name]}={'auto' if val is None else val}")
    Path(path).write_text("\n".join(lines) + "\n")
