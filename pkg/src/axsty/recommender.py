"""Target-reference pairing: global ranking, patch refinement, and
weighted category sampling.

A corpus entry carries a 128-dim global descriptor and a coarse feature
map. Candidates of the target's class are ranked by descriptor L2
distance (top 5), the best is refined by position-free cosine patch
matching on the feature maps, and training pairs are drawn from three
categories: the refined top-1 (weight 0.6), uniform over the top 5
(0.3), and uniform over the class remainder (0.1).

Descriptors come from a fixed seeded orthonormal projection of the
mean-pooled bottleneck feature, standing in for a fitted linear
reduction; externally computed descriptors load the same way.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import FeaturePyramid
from .ntf import read_ntf
from .tensor import ShapeError

DESCRIPTOR_DIM = 128
CATEGORY_WEIGHTS = (0.6, 0.3, 0.1)


@dataclass
class CorpusEntry:
    image_id: str
    label: str
    descriptor: np.ndarray          # [128]
    features: np.ndarray | None = None   # level-4 map [C, H, W]
    features_path: str | None = None

    def __post_init__(self):
        self.descriptor = np.asarray(self.descriptor, dtype=np.float64)
        if self.descriptor.shape != (DESCRIPTOR_DIM,):
            raise ShapeError(
                f"descriptor must be [{DESCRIPTOR_DIM}], got {self.descriptor.shape}")

    def feature_map(self) -> np.ndarray:
        if self.features is None:
            if self.features_path is None:
                raise ValueError(f"{self.image_id}: no feature map attached")
            self.features = read_ntf(self.features_path).astype(np.float64)
        return self.features


def build_descriptor(pyramid: FeaturePyramid, seed: int = 0) -> np.ndarray:
    """Project the spatially pooled bottleneck onto 128 fixed orthonormal
    directions (seeded, deterministic)."""
    pooled = pyramid.bottleneck.data.mean(axis=(1, 2))
    rng = np.random.default_rng(seed)
    gauss = rng.normal(size=(pooled.size, DESCRIPTOR_DIM))
    q, _ = np.linalg.qr(gauss)
    return q.T @ pooled


def global_rank_top5(target: CorpusEntry, pool: list[CorpusEntry]) -> list[str]:
    """Ids of the five same-class entries closest in descriptor L2
    distance, ascending; ties break by id. Shorter pools return what
    exists. The target itself is excluded."""
    candidates = [e for e in pool
                  if e.label == target.label and e.image_id != target.image_id]
    ranked = sorted(candidates,
                    key=lambda e: (float(np.sum((e.descriptor - target.descriptor) ** 2)),
                                   e.image_id))
    return [e.image_id for e in ranked[:5]]


def _patches(feature_map: np.ndarray, patch: int) -> np.ndarray:
    """Non-overlapping patch descriptors [n_patches, C*patch*patch]."""
    c, h, w = feature_map.shape
    if h < patch or w < patch:
        raise ShapeError(f"feature map {h}x{w} smaller than one {patch}x{patch} patch")
    ph, pw = h // patch, w // patch
    cropped = feature_map[:, :ph * patch, :pw * patch]
    blocks = cropped.reshape(c, ph, patch, pw, patch)
    return blocks.transpose(1, 3, 0, 2, 4).reshape(ph * pw, c * patch * patch)


def cosine_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1 - cosine similarity between patch rows; zero rows score 1."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    sim = a @ b.T
    denom = np.outer(na, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0, sim / denom, 0.0)
    return 1.0 - sim


def local_refine_top1(target: CorpusEntry, candidates: list[CorpusEntry],
                      patch: int = 2) -> str:
    """Among candidates, the entry whose patches best cover the target's:
    for every target patch take the least cosine distance to any
    candidate patch (position-free), then pick the candidate with the
    lowest mean."""
    if not candidates:
        raise ValueError("local_refine_top1 needs at least one candidate")
    t_patches = _patches(target.feature_map(), patch)
    best_id, best_score = None, np.inf
    for cand in candidates:
        c_patches = _patches(cand.feature_map(), patch)
        dist = cosine_distance_matrix(t_patches, c_patches)
        score = float(dist.min(axis=1).mean())
        if score < best_score - 1e-15 or (abs(score - best_score) <= 1e-15
                                          and (best_id is None or cand.image_id < best_id)):
            best_id, best_score = cand.image_id, score
    return best_id


@dataclass
class Ranking:
    """Precomputed pairing candidates for one target."""

    top1: str
    top5: list[str]
    class_rest: list[str]


def build_ranking(target: CorpusEntry, pool: list[CorpusEntry],
                  patch: int = 2) -> Ranking:
    top5 = global_rank_top5(target, pool)
    if not top5:
        raise ValueError(f"{target.image_id}: no same-class candidates in pool")
    by_id = {e.image_id: e for e in pool}
    top1 = local_refine_top1(target, [by_id[i] for i in top5], patch=patch)
    rest = sorted(e.image_id for e in pool
                  if e.label == target.label and e.image_id != target.image_id
                  and e.image_id not in top5)
    return Ranking(top1=top1, top5=top5, class_rest=rest)


def sample_reference(ranking: Ranking, rng: np.random.Generator) -> str:
    """One categorical draw over (top-1, top-5, class rest) with weights
    0.6/0.3/0.1, then uniform within the category. Empty categories fall
    through to the next available one."""
    u = rng.random()
    if u < CATEGORY_WEIGHTS[0]:
        return ranking.top1
    if u < CATEGORY_WEIGHTS[0] + CATEGORY_WEIGHTS[1] or not ranking.class_rest:
        return ranking.top5[rng.integers(len(ranking.top5))]
    return ranking.class_rest[rng.integers(len(ranking.class_rest))]


# ---------------------------------------------------------------------------
# corpus manifests
# ---------------------------------------------------------------------------


def load_manifest(path) -> list[CorpusEntry]:
    """Text manifest: one `id<TAB>class<TAB>descriptor.ntf<TAB>features.ntf`
    per line; paths resolve relative to the manifest."""
    base = Path(path).parent
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
        image_id, label, desc_file, feat_file = parts
        descriptor = read_ntf(base / desc_file).astype(np.float64)
        entries.append(CorpusEntry(image_id=image_id, label=label,
                                   descriptor=descriptor,
                                   features_path=str(base / feat_file)))
    return entries
