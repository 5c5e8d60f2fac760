"""Discrete Poisson blending on 4-connected pixel grids.

For every pixel ``p`` in the unknown region the blended value satisfies

    |N_p| f_p - sum_{q in N_p} f_q = sum_{q in N_p} (h_p - h_q)

where ``N_p`` holds the in-image 4-neighbours of ``p``, ``h`` is the
original image supplying the guidance differences and every pixel outside
the region is pinned to the generated image ``f_star``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exceptions import ParameterError, SolverError

DENSE_MAX_UNKNOWNS = 1024
DEFAULT_TOL = 1e-8

_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class BlendProblem:
    f_star: np.ndarray
    h: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        f_star = np.asarray(self.f_star, dtype=np.float64)
        h = np.asarray(self.h, dtype=np.float64)
        omega = np.asarray(self.omega, dtype=bool)
        if f_star.ndim != 2 or 0 in f_star.shape:
            raise ParameterError(f"images must be non-empty 2-D grids, got shape {f_star.shape}")
        if h.shape != f_star.shape or omega.shape != f_star.shape:
            raise ParameterError(f"dimension mismatch: f_star {f_star.shape}, h {h.shape}, "
                                 f"omega {omega.shape}")
        if not (np.all(np.isfinite(f_star)) and np.all(np.isfinite(h))):
            raise ParameterError("pixel values must be finite")
        object.__setattr__(self, "f_star", f_star)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "omega", omega)


@dataclass(frozen=True)
class PoissonSystem:
    """Sparse SPD system over the unknown pixels, in row-major pixel order."""

    A: sp.csr_matrix
    b: np.ndarray
    rows: np.ndarray
    cols: np.ndarray

    @property
    def n_unknowns(self) -> int:
        return self.b.size


def build_poisson_system(problem: BlendProblem) -> PoissonSystem:
    omega = problem.omega
    if not omega.any():
        raise ParameterError("omega is empty; nothing to solve")
    if omega.all():
        raise ParameterError("omega covers the whole image; the system has no boundary and is singular")
    H, W = omega.shape
    rows, cols = np.nonzero(omega)
    index = np.full(omega.shape, -1, dtype=np.int64)
    index[rows, cols] = np.arange(rows.size)

    f_star, h = problem.f_star, problem.h
    diag = np.zeros(rows.size)
    b = np.zeros(rows.size)
    off_i, off_j = [], []
    for dr, dc in _OFFSETS:
        nr, nc = rows + dr, cols + dc
        inside = (nr >= 0) & (nr < H) & (nc >= 0) & (nc < W)
        p = np.nonzero(inside)[0]
        qr, qc = nr[inside], nc[inside]
        diag[p] += 1.0
        b[p] += h[rows[p], cols[p]] - h[qr, qc]
        q_idx = index[qr, qc]
        known = q_idx < 0
        b[p[known]] += f_star[qr[known], qc[known]]
        off_i.append(p[~known])
        off_j.append(q_idx[~known])
    off_i = np.concatenate(off_i)
    off_j = np.concatenate(off_j)
    n = rows.size
    A = sp.csr_matrix(
        (np.concatenate([diag, -np.ones(off_i.size)]),
         (np.concatenate([np.arange(n), off_i]), np.concatenate([np.arange(n), off_j]))),
        shape=(n, n))
    A.sort_indices()
    return PoissonSystem(A, b, rows, cols)


def solve_cg(system: PoissonSystem, tol: float = DEFAULT_TOL, max_iter: int | None = None, x0=None):
    """Unpreconditioned conjugate gradients.

    Stops once ``||b - A x|| <= tol * ||b||``. Returns
    ``(x, relative_residual, iterations)``; raises :class:`SolverError` if
    ``max_iter`` (default ``10 * n``) is exhausted first.
    """
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol!r}")
    A, b = system.A, system.b
    n = b.size
    max_iter = 10 * n if max_iter is None else int(max_iter)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n), 0.0, 0
    r = b - A @ x
    rr = r @ r
    threshold = (tol * b_norm) ** 2
    if rr <= threshold:
        return x, float(np.sqrt(rr) / b_norm), 0
    d = r.copy()
    for it in range(1, max_iter + 1):
        Ad = A @ d
        step = rr / (d @ Ad)
        x += step * d
        r -= step * Ad
        rr_new = r @ r
        if rr_new <= threshold:
            return x, float(np.sqrt(rr_new) / b_norm), it
        d = r + (rr_new / rr) * d
        rr = rr_new
    residual = float(np.linalg.norm(b - A @ x) / b_norm)
    raise SolverError(f"CG did not converge in {max_iter} iterations (relative residual {residual:.3e})",
                      residual=residual, iterations=max_iter)


def solve_dense_oracle(system: PoissonSystem) -> np.ndarray:
    """Dense Cholesky solve; brute-force reference for grids up to 32x32."""
    n = system.n_unknowns
    if n > DENSE_MAX_UNKNOWNS:
        raise ParameterError(f"{n} unknowns exceeds the dense oracle cap of {DENSE_MAX_UNKNOWNS}")
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(system.A.toarray()), system.b)


def poisson_blend(problem: BlendProblem, solver="cg", tol: float = DEFAULT_TOL, max_iter=None):
    """Blend ``problem`` and return the full image.

    CG starts from ``f_star`` restricted to the region. Values are not clipped.
    """
    if solver not in ("cg", "dense"):
        raise ParameterError(f"solver must be 'cg' or 'dense', got {solver!r}")
    out = problem.f_star.copy()
    if not problem.omega.any():
        return out
    system = build_poisson_system(problem)
    if solver == "dense":
        x = solve_dense_oracle(system)
    else:
        x, _, _ = solve_cg(system, tol, max_iter, x0=problem.f_star[system.rows, system.cols])
    out[system.rows, system.cols] = x
    return out


def blend_channels(f_star, h, omega, **kwargs) -> np.ndarray:
    """Channel-wise blending for (H, W, C) images."""
    f_star = np.asarray(f_star, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if f_star.ndim == 2:
        return poisson_blend(BlendProblem(f_star, h, omega), **kwargs)
    return np.stack([poisson_blend(BlendProblem(f_star[..., c], h[..., c], omega), **kwargs)
                     for c in range(f_star.shape[-1])], axis=-1)


class PoissonBlender:
    """Reusable blender with fixed solver settings."""

    def __init__(self, solver="cg", tol=DEFAULT_TOL, max_iter=None):
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter

    def blend(self, f_star, h, omega):
        return blend_channels(f_star, h, omega, solver=self.solver, tol=self.tol,
                              max_iter=self.max_iter)
