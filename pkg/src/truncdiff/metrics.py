"""Two-sample distances and moment checks between point clouds."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .exceptions import ParameterError
from .mixture import GaussianMixture, gm_sample
from .validation import check_batch, check_int, check_rng

BLOCK_ROWS = 1024
BASELINE_PAIRS = 20


@dataclass(frozen=True)
class MetricReport:
    energy_distance: float
    mean_error: float
    cov_error: float
    baseline: float


def _distance_sum(A, B) -> float:
    # Row blocks bound memory at BLOCK_ROWS * len(B); partial sums are added in block order.
    total = 0.0
    for start in range(0, len(A), BLOCK_ROWS):
        total += float(cdist(A[start:start + BLOCK_ROWS], B).sum())
    return total


def _canonical_order(A, B):
    key_a = (A.shape, A.tobytes())
    key_b = (B.shape, B.tobytes())
    return (A, B) if key_a <= key_b else (B, A)


def energy_distance(A, B) -> float:
    """V-statistic energy distance ``2E|a-b| - E|a-a'| - E|b-b'|``.

    Inputs are put in a canonical order first so the result is bitwise
    symmetric in its arguments.
    """
    A = check_batch(A, name="A")
    B = check_batch(B, name="B")
    if A.shape[1] != B.shape[1]:
        raise ParameterError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    A, B = _canonical_order(A, B)
    n, m = len(A), len(B)
    cross = 2.0 * _distance_sum(A, B) / (n * m)
    within = _distance_sum(A, A) / (n * n) + _distance_sum(B, B) / (m * m)
    return cross - within


def moment_report(A, gm: GaussianMixture) -> tuple[float, float]:
    """``(|mean(A) - mean(gm)|, ||cov(A) - cov(gm)||_F)``."""
    A = check_batch(A, name="A", n_features=gm.dim)
    if len(A) < 2:
        raise ParameterError("moment_report needs at least 2 samples")
    mean_error = float(np.linalg.norm(A.mean(axis=0) - gm.mean()))
    cov = np.atleast_2d(np.cov(A, rowvar=False))
    cov_error = float(np.linalg.norm(cov - gm.covariance(), ord="fro"))
    return mean_error, cov_error


def energy_baseline(gm: GaussianMixture, n: int, random_state=None, pairs: int = BASELINE_PAIRS) -> float:
    """Median energy distance between independent same-size draws from ``gm``."""
    n = check_int(n, "n", low=1)
    rng = check_rng(random_state)
    values = [energy_distance(gm_sample(gm, n, rng), gm_sample(gm, n, rng)) for _ in range(pairs)]
    return float(np.median(values))


def metric_report(A, reference, gm: GaussianMixture, baseline: float) -> MetricReport:
    mean_error, cov_error = moment_report(A, gm)
    return MetricReport(energy_distance(A, reference), mean_error, cov_error, float(baseline))
