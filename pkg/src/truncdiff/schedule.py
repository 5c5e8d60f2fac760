"""Discrete variance schedules.

All tables are indexed by the step ``t`` directly and carry a ``t = 0`` entry
with ``beta = 0`` and ``alpha_bar = 1``, so that ``alpha_bar[t]`` is the
fraction of signal retained after ``t`` noising steps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ParameterError
from .validation import check_int

DEFAULT_T = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Immutable beta / alpha / alpha_bar tables over ``T`` steps."""

    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 2 or betas[0] != 0.0:
            raise ParameterError("betas must be 1-D with a leading 0 entry for t=0")
        if not np.all((betas[1:] > 0) & (betas[1:] < 1)):
            raise ParameterError("betas[1:] must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        if not (alpha_bars[-1] > 0 and np.all(np.diff(alpha_bars) < 0)):
            raise ParameterError("alpha_bar underflows: schedule destroys the signal before step T")
        for arr in (betas, alphas, alpha_bars):
            arr.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def T(self) -> int:
        return self.betas.size - 1

    def check_step(self, t, name="t", *, low=0) -> int:
        return check_int(t, name, low=low, high=self.T)

    def sigma(self, t) -> float:
        return ddpm_sigma(self, t)

    def to_rows(self):
        """Yield ``(t, beta, alpha, alpha_bar, sigma)`` for t = 1..T."""
        for t in range(1, self.T + 1):
            yield t, self.betas[t], self.alphas[t], self.alpha_bars[t], ddpm_sigma(self, t)

    def __repr__(self):
        return (f"NoiseSchedule(T={self.T}, beta_1={self.betas[1]:.3g}, "
                f"beta_T={self.betas[-1]:.3g})")


def make_linear_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                         beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Betas linearly interpolated from ``beta_start`` at t=1 to ``beta_end`` at t=T."""
    T = check_int(T, "T", low=1)
    for name, value in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not isinstance(value, (int, float)) or not math.isfinite(value) or not 0 < value < 1:
            raise ParameterError(f"{name} must lie in (0, 1), got {value!r}")
    if beta_start > beta_end:
        raise ParameterError(f"beta_start={beta_start} exceeds beta_end={beta_end}")
    if T == 1:
        ramp = np.array([beta_start], dtype=np.float64)
    else:
        ramp = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return NoiseSchedule(np.concatenate(([0.0], ramp)))


def ddpm_sigma(sched: NoiseSchedule, t: int) -> float:
    """Ancestral-sampling noise scale for the step t -> t-1."""
    t = sched.check_step(t, low=1)
    ab_prev, ab = sched.alpha_bars[t - 1], sched.alpha_bars[t]
    var = (1.0 - ab_prev) / (1.0 - ab) * sched.betas[t]
    return math.sqrt(max(var, 0.0))
