"""Scikit-learn style facades so the colouriser and the reference
recommender compose with pipelines, clone() and parameter search.

``ExemplarColorizer.fit`` runs the desk-scale training loop on a list
of (target, reference) RGB pairs; ``predict`` colourises new pairs with
the fitted weights. Images are channels-first float arrays in [0, 1]
with sides divisible by 16.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import as_lab_pair
from .colorspace import LabImage, lab_to_rgb, rgb_to_lab
from .config import Config
from .metrics import his_score
from .recommender import CorpusEntry, Ranking, build_ranking, sample_reference
from .tensor import Tensor
from .trainer import train_loop

__all__ = ["ExemplarColorizer", "ReferenceRecommender"]


class ExemplarColorizer(BaseEstimator):
    """Exemplar-guided colourisation as a fit/predict estimator.

    Parameters mirror the runtime configuration; see `axsty.config`.
    ``steps`` controls the number of optimisation steps in ``fit``.
    """

    def __init__(self, hidden_dim=256, head_dim=64, heads=8, attention_mode="axial",
                 repeats=2, span=None, from_block=3, w_pixel=100.0, w_hist=2.0,
                 w_tv=50.0, w_gan=1.0, lr=1e-3, steps=200, seed=0, backbone_seed=0):
        self.hidden_dim = hidden_dim
        self.head_dim = head_dim
        self.heads = heads
        self.attention_mode = attention_mode
        self.repeats = repeats
        self.span = span
        self.from_block = from_block
        self.w_pixel = w_pixel
        self.w_hist = w_hist
        self.w_tv = w_tv
        self.w_gan = w_gan
        self.lr = lr
        self.steps = steps
        self.seed = seed
        self.backbone_seed = backbone_seed

    def _config(self) -> Config:
        return Config(
            hidden_dim=self.hidden_dim, head_dim=self.head_dim, heads=self.heads,
            attention_mode=self.attention_mode, repeats=self.repeats, span=self.span,
            from_block=self.from_block, w_pixel=self.w_pixel, w_hist=self.w_hist,
            w_tv=self.w_tv, w_gan=self.w_gan, lr=self.lr, seed=self.seed,
            backbone_seed=self.backbone_seed).validate()

    def _to_lab_pairs(self, X) -> list[tuple[LabImage, LabImage]]:
        pairs = [as_lab_pair(t, r) for t, r in X]
        sizes = {(t.height, t.width) for t, _ in pairs}
        if len(sizes) > 1:
            raise ValueError(f"all pairs must share one size, got {sorted(sizes)}")
        return pairs

    def fit(self, X, y=None):
        """Train on (target_rgb, reference_rgb) pairs. y is ignored."""
        pairs = self._to_lab_pairs(X)
        cfg = self._config()
        self.result_ = train_loop(pairs, cfg, steps=self.steps)
        self.net_ = self.result_.net
        self.input_size_ = (pairs[0][0].height, pairs[0][0].width)
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("this ExemplarColorizer instance is not fitted yet")

    def predict(self, X) -> list[np.ndarray]:
        """Colourised RGB images, one [3,H,W] array per input pair."""
        self._check_fitted()
        out = []
        for t_rgb, r_rgb in X:
            target, reference = as_lab_pair(t_rgb, r_rgb)
            if (target.height, target.width) != self.input_size_:
                raise ValueError(
                    f"fitted for {self.input_size_}, got {target.height}x{target.width}")
            preds = self.net_.forward(target, reference)
            merged = LabImage(L=target.L, ab=Tensor(preds.levels[0].data.copy()))
            out.append(lab_to_rgb(merged).data)
        return out

    def score(self, X, y=None) -> float:
        """Mean chrominance-histogram intersection against the references."""
        self._check_fitted()
        preds = self.predict(X)
        scores = [his_score(rgb_to_lab(rgb), rgb_to_lab(np.asarray(r_rgb)))
                  for rgb, (_, r_rgb) in zip(preds, X)]
        return float(np.mean(scores))


class ReferenceRecommender(BaseEstimator):
    """Corpus-backed reference pairing as a fit/predict estimator.

    ``fit`` indexes a list of CorpusEntry; ``predict`` maps target ids
    to their refined top-1 reference; ``sample`` draws from the weighted
    category distribution.
    """

    def __init__(self, patch=2, seed=0):
        self.patch = patch
        self.seed = seed

    def fit(self, X, y=None):
        self.pool_ = list(X)
        if not self.pool_:
            raise ValueError("corpus is empty")
        self.by_id_ = {e.image_id: e for e in self.pool_}
        self.rankings_: dict[str, Ranking] = {}
        return self

    def _check_fitted(self):
        if not hasattr(self, "pool_"):
            raise NotFittedError("this ReferenceRecommender instance is not fitted yet")

    def _ranking(self, image_id: str) -> Ranking:
        self._check_fitted()
        if image_id not in self.by_id_:
            raise KeyError(f"unknown image id {image_id!r}")
        if image_id not in self.rankings_:
            self.rankings_[image_id] = build_ranking(
                self.by_id_[image_id], self.pool_, patch=self.patch)
        return self.rankings_[image_id]

    def predict(self, X) -> list[str]:
        """Refined top-1 reference id for each target id in X."""
        return [self._ranking(image_id).top1 for image_id in X]

    def sample(self, image_id: str, rng: np.random.Generator | None = None) -> str:
        """One weighted-category draw for the given target."""
        rng = rng or np.random.default_rng(self.seed)
        return sample_reference(self._ranking(image_id), rng)
