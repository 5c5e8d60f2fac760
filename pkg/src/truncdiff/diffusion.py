"""Forward noising, single reverse steps and full sampling chains.

Steps are pure functions of their arguments; the chains own the random
stream and draw every Gaussian variate from the ``numpy.random.Generator``
they are handed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError
from .schedule import NoiseSchedule, ddpm_sigma
from .validation import check_batch, check_finite, check_int, check_same_shape

DDPM = "ddpm"
DDIM = "ddim"
SAMPLERS = (DDPM, DDIM)


@dataclass(frozen=True)
class SamplerSpec:
    """Which reverse process to run and over how many steps.

    ``T_start`` is the step the chain starts from (``T`` for a full run, the
    truncation step otherwise). For DDPM ``n_steps`` always equals ``T_start``.
    """

    kind: str
    T_start: int
    n_steps: int | None = None

    def __post_init__(self):
        if self.kind not in SAMPLERS:
            raise ParameterError(f"kind must be one of {SAMPLERS}, got {self.kind!r}")
        T_start = check_int(self.T_start, "T_start", low=1)
        if self.kind == DDPM:
            if self.n_steps not in (None, T_start):
                raise ParameterError("DDPM runs every step: n_steps must equal T_start")
            object.__setattr__(self, "n_steps", T_start)
        else:
            check_int(self.n_steps, "n_steps", low=1, high=T_start)

    def validate(self, sched: NoiseSchedule) -> None:
        if self.T_start > sched.T:
            raise ParameterError(f"T_start={self.T_start} exceeds schedule T={sched.T}")


def forward_diffuse(x0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    """Sample of the noised state after ``t`` steps given the noise draw ``eps``."""
    x0 = check_batch(x0, name="x0")
    eps = check_batch(eps, name="eps")
    check_same_shape(x0, eps, ("x0", "eps"))
    t = sched.check_step(t)
    if t == 0:
        return x0.copy()
    ab = sched.alpha_bars[t]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def ddpm_step(x_t, t: int, eps_hat, z, sched: NoiseSchedule) -> np.ndarray:
    """One ancestral denoising step from ``t`` to ``t - 1``."""
    x_t = check_batch(x_t, name="x_t")
    eps_hat = check_batch(eps_hat, name="eps_hat")
    z = check_batch(z, name="z")
    check_same_shape(x_t, eps_hat, ("x_t", "eps_hat"))
    check_same_shape(x_t, z, ("x_t", "z"))
    t = sched.check_step(t, low=1)
    alpha, ab = sched.alphas[t], sched.alpha_bars[t]
    mean = (x_t - (sched.betas[t] / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(alpha)
    sigma = ddpm_sigma(sched, t)
    if sigma == 0.0:
        return mean
    return mean + sigma * z


def predict_x0(x_t, t: int, eps_hat, sched: NoiseSchedule) -> np.ndarray:
    ab = sched.alpha_bars[t]
    return (x_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def ddim_step(x_t, t: int, t_prev: int, eps_hat, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic (eta = 0) implicit step from ``t`` to ``t_prev``."""
    x_t = check_batch(x_t, name="x_t")
    eps_hat = check_batch(eps_hat, name="eps_hat")
    check_same_shape(x_t, eps_hat, ("x_t", "eps_hat"))
    t = sched.check_step(t, low=1)
    t_prev = sched.check_step(t_prev, "t_prev")
    if t_prev >= t:
        raise ParameterError(f"t_prev={t_prev} must be below t={t}")
    x0_hat = predict_x0(x_t, t, eps_hat, sched)
    if t_prev == 0:
        return x0_hat
    ab_prev = sched.alpha_bars[t_prev]
    return math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps_hat


def make_step_subsequence(T_start: int, n_steps: int) -> list[int]:
    """Evenly spaced descending steps ``[T_start, ..., round(T_start / n_steps)]``.

    Rounding is half-up, done in integer arithmetic.
    """
    T_start = check_int(T_start, "T_start", low=1)
    n_steps = check_int(n_steps, "n_steps", low=1, high=T_start)
    return [(2 * T_start * (n_steps + 1 - i) + n_steps) // (2 * n_steps)
            for i in range(1, n_steps + 1)]


def _predict(denoiser, x, t, cond):
    eps_hat = np.asarray(denoiser.predict_eps(x, t, cond), dtype=np.float64)
    if eps_hat.shape != x.shape:
        raise ParameterError(f"denoiser returned shape {eps_hat.shape}, expected {x.shape}")
    check_finite(eps_hat, "denoiser", step=t)
    return eps_hat


def sample_chain(denoiser, spec: SamplerSpec, start, sched: NoiseSchedule,
                 rng: np.random.Generator, cond=None) -> np.ndarray:
    """Run the reverse process from ``start`` (the state at ``spec.T_start``) to step 0.

    ``denoiser`` is any object with ``predict_eps(x, t, cond)``.
    """
    spec.validate(sched)
    x = check_batch(start, name="start", copy=True)
    if spec.kind == DDPM:
        for t in range(spec.T_start, 0, -1):
            eps_hat = _predict(denoiser, x, t, cond)
            z = rng.standard_normal(x.shape) if t > 1 else np.zeros_like(x)
            x = ddpm_step(x, t, eps_hat, z, sched)
    else:
        steps = make_step_subsequence(spec.T_start, spec.n_steps) + [0]
        for t, t_prev in zip(steps[:-1], steps[1:]):
            eps_hat = _predict(denoiser, x, t, cond)
            x = ddim_step(x, t, t_prev, eps_hat, sched)
    check_finite(x, "sampler")
    return x


def truncated_sample(coarse, T_trunc: int, spec: SamplerSpec | None, denoiser,
                     sched: NoiseSchedule, rng: np.random.Generator, cond=None) -> np.ndarray:
    """Noise a coarse batch to step ``T_trunc`` and denoise it back to step 0.

    ``T_trunc = 0`` returns a copy of ``coarse`` untouched and draws nothing
    from ``rng``.
    """
    coarse = check_batch(coarse, name="coarse")
    T_trunc = sched.check_step(T_trunc, "T_trunc")
    if T_trunc == 0:
        return coarse.copy()
    if spec is None or spec.T_start != T_trunc:
        raise ParameterError("spec.T_start must equal T_trunc")
    eps = rng.standard_normal(coarse.shape)
    x_start = forward_diffuse(coarse, T_trunc, eps, sched)
    return sample_chain(denoiser, spec, x_start, sched, rng, cond=cond)
