"""Estimator wrapper around the reverse chains.

``DiffusionRefiner.transform`` takes a batch of coarse samples, noises them to
``t_trunc`` and denoises them back; ``sample`` runs the full chain from pure
noise. Large batches can be split into fixed-size blocks that run on a
thread pool: each block draws from its own child seed, derived from
``(random_state, block index)``, so the output does not depend on ``n_jobs``.
"""
from __future__ import annotations

import numbers

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin

from .diffusion import DDIM, DDPM, SamplerSpec, sample_chain, truncated_sample
from .exceptions import ParameterError
from .schedule import NoiseSchedule
from .validation import check_batch, check_int


class DiffusionRefiner(TransformerMixin, BaseEstimator):
    """Truncated reverse diffusion seeded by coarse samples.

    Parameters
    ----------
    denoiser : object with ``predict_eps(x, t, cond)``
    schedule : NoiseSchedule
    t_trunc : int or None
        Step the chain starts from; ``None`` means the full schedule length.
    sampler : {"ddim", "ddpm"}
    n_steps : int
        DDIM sub-chain length, ignored for DDPM.
    random_state : int or None
    block_size : int or None
        Rows per independently seeded block; ``None`` keeps one block.
    n_jobs : int or None
    """

    def __init__(self, denoiser=None, schedule=None, t_trunc=None, sampler=DDIM, n_steps=2,
                 random_state=None, block_size=None, n_jobs=None):
        self.denoiser = denoiser
        self.schedule = schedule
        self.t_trunc = t_trunc
        self.sampler = sampler
        self.n_steps = n_steps
        self.random_state = random_state
        self.block_size = block_size
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        if not hasattr(self.denoiser, "predict_eps"):
            raise ParameterError("denoiser must provide predict_eps(x, t, cond)")
        if not isinstance(self.schedule, NoiseSchedule):
            raise ParameterError("schedule must be a NoiseSchedule")
        self.t_trunc_ = self.schedule.T if self.t_trunc is None else self.schedule.check_step(self.t_trunc, "t_trunc")
        self.spec_ = self._spec(self.t_trunc_) if self.t_trunc_ > 0 else None
        if X is not None:
            self.n_features_in_ = check_batch(X).shape[1]
        return self

    def _spec(self, T_start):
        if self.sampler == DDPM:
            return SamplerSpec(DDPM, T_start)
        return SamplerSpec(self.sampler, T_start, min(self.n_steps, T_start))

    def _block_seeds(self, n):
        if self.random_state is not None and not isinstance(self.random_state, numbers.Integral):
            raise ParameterError("random_state must be an int or None")
        root = np.random.SeedSequence(self.random_state)
        size = n if self.block_size is None else check_int(self.block_size, "block_size", low=1)
        starts = list(range(0, n, size))
        return [(s, min(s + size, n)) for s in starts], root.spawn(len(starts))

    def _run(self, fn, n):
        blocks, seeds = self._block_seeds(n)
        jobs = (delayed(fn)(lo, hi, np.random.default_rng(ss)) for (lo, hi), ss in zip(blocks, seeds))
        parts = Parallel(n_jobs=self.n_jobs, prefer="threads")(jobs)
        return np.vstack(parts)

    def transform(self, X, cond=None):
        """Refine coarse samples ``X``; ``t_trunc = 0`` returns them unchanged."""
        if not hasattr(self, "t_trunc_"):
            self.fit()
        X = check_batch(X)
        if self.t_trunc_ == 0:
            return X.copy()
        cond = None if cond is None else np.asarray(cond, dtype=np.float64)

        def block(lo, hi, rng):
            c = None if cond is None else cond[lo:hi]
            return truncated_sample(X[lo:hi], self.t_trunc_, self.spec_, self.denoiser,
                                    self.schedule, rng, cond=c)

        return self._run(block, len(X))

    def sample(self, n, n_features, cond=None):
        """Draw ``n`` points by running the chain from pure noise at ``t_trunc``."""
        if not hasattr(self, "t_trunc_"):
            self.fit()
        n = check_int(n, "n", low=1)
        if self.spec_ is None:
            raise ParameterError("sampling from noise needs t_trunc >= 1")

        def block(lo, hi, rng):
            start = rng.standard_normal((hi - lo, n_features))
            c = None if cond is None else np.asarray(cond)[lo:hi]
            return sample_chain(self.denoiser, self.spec_, start, self.schedule, rng, cond=c)

        return self._run(block, n)
