"""Truncation x step-count sweeps written as CSV.

Random streams are split up front from the config seed: one for the coarse
batch, one for the reference draws, one for the true-vs-true baseline and
one child per sweep cell. Every cell therefore sees the same coarse batch
and reference, and the CSV is a pure function of the config.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import ExperimentConfig
from .diffusion import DDPM, SamplerSpec, sample_chain, truncated_sample
from .metrics import energy_baseline, metric_report
from .mixture import AnalyticDenoiser, gm_sample
from .network import AdapterDenoiser

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("experiment_id", "sampler", "T_trunc", "n_steps", "seed", "energy_distance",
               "baseline", "mean_error", "cov_error", "wall_ms")


def build_denoiser(cfg: ExperimentConfig, sched, target):
    if cfg.denoiser.kind == "analytic":
        return AnalyticDenoiser(target, sched).fit()
    net = AdapterDenoiser.load(cfg.resolve(cfg.denoiser.path))
    if net.schedule_.T != sched.T or not np.array_equal(net.schedule_.betas, sched.betas):
        logger.warning("checkpoint schedule differs from the config schedule; using the config schedule")
        net.schedule_ = sched
    return net


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cell_spec(sampler, T_trunc, n_steps):
    if sampler == DDPM:
        return SamplerSpec(DDPM, T_trunc), T_trunc
    return SamplerSpec(sampler, T_trunc, n_steps), n_steps


def run_experiment(cfg: ExperimentConfig, *, workers: int = 1, sink=None):
    """Run every sweep cell and return the CSV rows (header excluded).

    ``sink``, if given, receives each row in grid order as soon as it and all
    earlier rows are done.
    """
    cfg.check_sweep()
    sched = cfg.build_schedule()
    target = cfg.build_target()
    coarse_gen = cfg.build_coarse(target)
    denoiser = build_denoiser(cfg, sched, target)
    n = cfg.n_samples
    cells = cfg.sweep_cells()

    coarse_ss, ref_ss, base_ss, cells_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    coarse, cond = coarse_gen.sample(n, np.random.default_rng(coarse_ss))
    reference = gm_sample(target, n, np.random.default_rng(ref_ss))
    baseline = energy_baseline(target, n, np.random.default_rng(base_ss))
    cell_seeds = cells_ss.spawn(len(cells))
    uses_cond = getattr(denoiser, "cond_dim", 0) > 0

    def run_cell(i):
        T_trunc, n_steps = cells[i]
        rng = np.random.default_rng(cell_seeds[i])
        start = time.perf_counter()
        if T_trunc == 0:
            out, sampler, steps = coarse.copy(), "coarse", 0
        else:
            spec, steps = _cell_spec(cfg.sweep.sampler, T_trunc, n_steps)
            sampler = cfg.sweep.sampler
            if T_trunc == sched.T:
                x_T = rng.standard_normal(coarse.shape)
                out = sample_chain(denoiser, spec, x_T, sched, rng, cond=cond if uses_cond else None)
            else:
                out = truncated_sample(coarse, T_trunc, spec, denoiser, sched, rng,
                                       cond=cond if uses_cond else None)
        wall_ms = (time.perf_counter() - start) * 1e3
        report = metric_report(out, reference, target, baseline)
        return [cfg.digest, sampler, T_trunc, steps, cfg.seed, report.energy_distance,
                report.baseline, report.mean_error, report.cov_error,
                round(wall_ms, 3) if cfg.timing else ""]

    rows = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for row in pool.map(run_cell, range(len(cells))):
            rows.append(row)
            if sink is not None:
                sink(row)
    return rows


def write_experiment_csv(cfg: ExperimentConfig, path, *, workers: int = 1):
    """Run the sweep, streaming rows to ``path``.

    On failure the rows finished so far are kept and a ``FAILED`` marker row
    naming the error is appended before the exception propagates.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)

        def sink(row):
            writer.writerow([_fmt(v) for v in row])
            fh.flush()

        try:
            return run_experiment(cfg, workers=workers, sink=sink)
        except Exception as exc:
            writer.writerow(["FAILED", f"{type(exc).__name__}: {exc}"] + [""] * (len(CSV_COLUMNS) - 2))
            fh.flush()
            raise


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()
