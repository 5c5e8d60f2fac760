"""Fast, deliberately imperfect samplers standing in for a pre-trained generator.

Each kind models one failure mode of a one-shot generator: a systematic
offset (``biased``), too much spread (``overdispersed``) or collapse onto
component centres (``mean_collapse``). ``exact`` draws from the reference.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ParameterError
from .mixture import GaussianMixture, gm_sample
from .validation import check_int, check_rng

KINDS = ("exact", "biased", "overdispersed", "mean_collapse")


class CoarseGenerator(BaseEstimator):
    """Sampler with a dialable imperfection relative to ``reference``."""

    def __init__(self, reference=None, kind="exact", offset=None, scale=1.0):
        self.reference = reference
        self.kind = kind
        self.offset = offset
        self.scale = scale

    def fit(self, X=None, y=None):
        if not isinstance(self.reference, GaussianMixture):
            raise ParameterError("reference must be a GaussianMixture")
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}, got {self.kind!r}")
        dim = self.reference.dim
        if self.kind == "biased":
            if self.offset is None:
                raise ParameterError("biased generator needs an offset")
            offset = np.broadcast_to(np.asarray(self.offset, dtype=np.float64), (dim,)).copy()
            if not np.all(np.isfinite(offset)):
                raise ParameterError("offset must be finite")
            self.offset_ = offset
        if self.kind == "overdispersed":
            if not np.isfinite(self.scale) or self.scale < 1:
                raise ParameterError(f"scale must be >= 1, got {self.scale!r}")
        self.n_features_in_ = dim
        return self

    def sample(self, n, random_state=None):
        """Return ``(X, cond)``; the condition for each sample is the point itself."""
        if not hasattr(self, "n_features_in_"):
            self.fit()
        n = check_int(n, "n", low=1)
        rng = check_rng(random_state)
        ref = self.reference
        if self.kind == "exact":
            X = gm_sample(ref, n, rng)
        elif self.kind == "biased":
            X = gm_sample(ref, n, rng) + self.offset_
        elif self.kind == "overdispersed":
            wide = GaussianMixture(ref.weights, ref.means, ref.variances * self.scale ** 2)
            X = gm_sample(wide, n, rng)
        else:
            labels = rng.choice(ref.n_components, size=n, p=ref.weights)
            X = ref.means[labels].copy()
        return X, X.copy()


def coarse_generate(gen: CoarseGenerator, n: int, rng):
    return gen.sample(n, rng)
