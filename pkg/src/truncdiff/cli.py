"""Command-line entry point: ``truncdiff <subcommand> ...``.

Exit status is 0 on success, 1 on invalid input or configuration and 2 on
numeric or solver failure. Log verbosity comes from ``TRUNCDIFF_LOG_LEVEL``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .blend import BlendProblem, poisson_blend
from .config import load_config
from .diffusion import DDPM, SamplerSpec, sample_chain, truncated_sample
from .exceptions import NumericError, ParameterError
from .experiment import build_denoiser, write_experiment_csv
from .network import AdapterDenoiser, init_params, is_adapter_output, grad_check
from .pgm import read_pgm, write_pgm

logger = logging.getLogger("truncdiff")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout
    return open(path, "w", encoding="utf-8", newline="")


def cmd_schedule_dump(args):
    cfg = load_config(args.config, require_target=False)
    sched = cfg.build_schedule()
    fh = _open_out(args.output)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "beta", "alpha", "alpha_bar", "sigma"])
        for t, beta, alpha, ab, sigma in sched.to_rows():
            writer.writerow([t, repr(float(beta)), repr(float(alpha)), repr(float(ab)), repr(float(sigma))])
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_sample(args):
    cfg = load_config(args.config)
    sched, target = cfg.build_schedule(), cfg.build_target()
    denoiser = build_denoiser(cfg, sched, target)
    s = cfg.sample
    T_start = sched.T if s.T_trunc is None else s.T_trunc
    coarse_ss, chain_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(chain_ss)
    cond = None
    if s.T_trunc is None or s.T_trunc == sched.T:
        spec = SamplerSpec(DDPM, T_start) if s.sampler == DDPM else SamplerSpec(s.sampler, T_start, s.n_steps)
        out = sample_chain(denoiser, spec, rng.standard_normal((cfg.n_samples, target.dim)), sched, rng)
    else:
        coarse, cond = cfg.build_coarse(target).sample(cfg.n_samples, np.random.default_rng(coarse_ss))
        spec = None
        if T_start > 0:
            spec = (SamplerSpec(DDPM, T_start) if s.sampler == DDPM
                    else SamplerSpec(s.sampler, T_start, min(s.n_steps, T_start)))
        use_cond = getattr(denoiser, "cond_dim", 0) > 0
        out = truncated_sample(coarse, T_start, spec, denoiser, sched, rng, cond=cond if use_cond else None)
    path = args.output or cfg.resolve(cfg.output)
    fh = _open_out(path)
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(out.shape[1])])
        writer.writerows([[repr(float(v)) for v in row] for row in out])
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_truncate_experiment(args):
    cfg = load_config(args.config)
    path = args.output or cfg.resolve(cfg.output)
    rows = write_experiment_csv(cfg, path, workers=args.workers)
    logger.info("wrote %d rows to %s", len(rows), path)


def cmd_train(args):
    cfg = load_config(args.config)
    sched, target = cfg.build_schedule(), cfg.build_target()
    tc = cfg.train
    net = AdapterDenoiser(schedule=sched, hidden_sizes=tc.hidden_sizes, lock_base=tc.lock_base,
                          n_iter=tc.steps, batch_size=tc.batch_size, learning_rate=tc.learning_rate,
                          lr_decay=tc.lr_decay,
                          t_max=tc.t_max, random_state=cfg.seed)
    net.fit(target)
    net.save(cfg.resolve(tc.checkpoint))
    fh = _open_out(args.output or cfg.resolve(cfg.output))
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss"])
        writer.writerows([i, repr(float(v))] for i, v in enumerate(net.loss_history_))
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_gradcheck(args):
    cfg = load_config(args.config)
    sched, target = cfg.build_schedule(), cfg.build_target()
    gc = cfg.gradcheck
    rng = np.random.default_rng(cfg.seed)
    cond_dim = target.dim
    params = init_params(target.dim, cond_dim, cfg.train.hidden_sizes, rng, zero_output=False,
                         adapter_init="random")
    for name in params:
        if is_adapter_output(name):
            params[name] = 0.1 * rng.standard_normal(params[name].shape)
    x = rng.standard_normal((gc.batch_size, target.dim))
    t = rng.integers(1, sched.T + 1, size=gc.batch_size)
    cond = rng.standard_normal((gc.batch_size, cond_dim))
    err = grad_check(params, sched, x, t, cond, probe_count=gc.probe_count, rng=rng)
    ok = err < gc.tolerance
    print(f"max relative error {err:.3e} over {gc.probe_count} probes: {'PASS' if ok else 'FAIL'}")
    if not ok:
        raise NumericError(f"gradient check failed: {err:.3e} >= {gc.tolerance:.1e}")


def cmd_blend(args):
    f_star, h, mask = read_pgm(args.f_star), read_pgm(args.h), read_pgm(args.mask)
    out = poisson_blend(BlendProblem(f_star, h, mask > 0), solver=args.solver, tol=args.tol,
                        max_iter=args.max_iter)
    write_pgm(args.output, out, binary=not args.ascii)


def build_parser():
    parser = argparse.ArgumentParser(prog="truncdiff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule-dump", help="write the noise schedule as CSV")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_schedule_dump)

    p = sub.add_parser("sample", help="draw samples with the configured denoiser")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("truncate-experiment", help="run the truncation x step sweep")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_truncate_experiment)

    p = sub.add_parser("train", help="train the adapter denoiser on the target mixture")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="loss-history CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="compare backprop with finite differences")
    p.add_argument("config")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("blend", help="Poisson-blend two PGM images inside a mask")
    p.add_argument("f_star", help="generated image (PGM)")
    p.add_argument("h", help="original image supplying guidance differences (PGM)")
    p.add_argument("mask", help="region to solve, nonzero pixels (PGM)")
    p.add_argument("output", help="blended image (PGM)")
    p.add_argument("--solver", choices=("cg", "dense"), default="cg")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--ascii", action="store_true", help="write P2 instead of P5")
    p.set_defaults(func=cmd_blend)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TRUNCDIFF_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
