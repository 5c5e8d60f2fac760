"""Diagonal Gaussian mixtures and their closed-form optimal noise predictor."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from .exceptions import ParameterError
from .schedule import NoiseSchedule
from .validation import check_batch, check_int, check_rng


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """K-component mixture with per-dimension (diagonal) variances."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None]
        var = np.array(self.variances, dtype=np.float64)
        if var.ndim == 0:
            var = np.full(mu.shape, float(var))
        elif var.ndim == 1 and var.size == w.size:
            var = np.repeat(var[:, None], mu.shape[1], axis=1)
        if mu.shape[0] != w.size or var.shape != mu.shape:
            raise ParameterError(f"inconsistent mixture shapes: weights {w.shape}, "
                                 f"means {mu.shape}, variances {var.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(var))):
            raise ParameterError("mixture parameters must be finite")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError(f"weights must be non-negative and sum to 1, got {w.tolist()}")
        if np.any(var <= 0):
            raise ParameterError("variances must be positive")
        for arr in (w, mu, var):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        """Within-component plus between-component covariance."""
        m = self.mean()
        centred = self.means - m
        between = (self.weights[:, None] * centred).T @ centred
        within = np.diag(self.weights @ self.variances)
        return within + between

    def sample(self, n, random_state=None, *, return_labels=False):
        return gm_sample(self, n, random_state, return_labels=return_labels)

    def marginal_at(self, sched: NoiseSchedule, t: int) -> "GaussianMixture":
        return gm_marginal_at(self, sched, t)

    def log_component_densities(self, X) -> np.ndarray:
        """``log w_k + log N(x; mu_k, diag var_k)`` as an (n, K) array."""
        X = check_batch(X, n_features=self.dim)
        diff = X[:, None, :] - self.means[None, :, :]
        quad = np.sum(diff * diff / self.variances[None], axis=2)
        log_norm = np.sum(np.log(2 * np.pi * self.variances), axis=1)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return log_w[None, :] - 0.5 * (quad + log_norm[None, :])

    def responsibilities(self, X) -> np.ndarray:
        logp = self.log_component_densities(X)
        return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))

    @classmethod
    def symmetric_pair(cls, separation=3.0, dim=2, variance=1.0):
        """Equal-weight pair with means at ``(+-separation, 0, ...)``."""
        means = np.zeros((2, dim))
        means[:, 0] = (-separation, separation)
        return cls(np.array([0.5, 0.5]), means, np.full((2, dim), variance))


def gm_sample(gm: GaussianMixture, n: int, random_state=None, *, return_labels=False):
    """Draw ``n`` points: a component by weight, then a diagonal Gaussian draw."""
    n = check_int(n, "n", low=1)
    rng = check_rng(random_state)
    labels = rng.choice(gm.n_components, size=n, p=gm.weights)
    noise = rng.standard_normal((n, gm.dim))
    X = gm.means[labels] + np.sqrt(gm.variances[labels]) * noise
    return (X, labels) if return_labels else X


def gm_marginal_at(gm: GaussianMixture, sched: NoiseSchedule, t: int) -> GaussianMixture:
    """Distribution of the noised state after ``t`` forward steps."""
    t = sched.check_step(t)
    if t == 0:
        return gm
    ab = sched.alpha_bars[t]
    return GaussianMixture(gm.weights, math.sqrt(ab) * gm.means,
                           ab * gm.variances + (1.0 - ab))


def posterior_mean_x0(gm: GaussianMixture, sched: NoiseSchedule, X, t: int,
                      *, return_responsibilities=False):
    """``E[x0 | x_t = x]`` under the mixture prior."""
    t = sched.check_step(t, low=1)
    X = check_batch(X, n_features=gm.dim)
    ab = sched.alpha_bars[t]
    sqrt_ab = math.sqrt(ab)
    marginal = gm_marginal_at(gm, sched, t)
    resp = marginal.responsibilities(X)
    gain = sqrt_ab * gm.variances / marginal.variances  # (K, d)
    cond_means = gm.means[None] + gain[None] * (X[:, None, :] - marginal.means[None])
    mean = np.einsum("nk,nkd->nd", resp, cond_means)
    return (mean, resp) if return_responsibilities else mean


def analytic_eps(gm: GaussianMixture, sched: NoiseSchedule, X, t: int) -> np.ndarray:
    """Minimum-mean-squared-error noise prediction for data drawn from ``gm``."""
    t = check_int(t, "t")
    if t == 0:
        raise ParameterError("analytic_eps is undefined at t=0 (no noise has been added)")
    X = check_batch(X, n_features=gm.dim)
    ab = sched.alpha_bars[sched.check_step(t, low=1)]
    x0_mean = posterior_mean_x0(gm, sched, X, t)
    return (X - math.sqrt(ab) * x0_mean) / math.sqrt(1.0 - ab)


class AnalyticDenoiser(BaseEstimator):
    """Exact noise predictor for a known mixture; the verification oracle.

    ``fit`` only validates; there is nothing to learn.
    """

    def __init__(self, mixture=None, schedule=None):
        self.mixture = mixture
        self.schedule = schedule

    def fit(self, X=None, y=None):
        if not isinstance(self.mixture, GaussianMixture):
            raise ParameterError("mixture must be a GaussianMixture")
        if not isinstance(self.schedule, NoiseSchedule):
            raise ParameterError("schedule must be a NoiseSchedule")
        self.n_features_in_ = self.mixture.dim
        return self

    def predict_eps(self, X, t, cond=None):
        if not hasattr(self, "n_features_in_"):
            self.fit()
        return analytic_eps(self.mixture, self.schedule, X, t)
