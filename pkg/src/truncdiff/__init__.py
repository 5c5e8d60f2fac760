"""Truncated diffusion sampling seeded by a coarse generator, with Poisson blending."""
from .blend import BlendProblem, PoissonBlender, build_poisson_system, poisson_blend, solve_cg, solve_dense_oracle
from .coarse import CoarseGenerator, coarse_generate
from .diffusion import (SamplerSpec, ddim_step, ddpm_step, forward_diffuse, make_step_subsequence,
                        sample_chain, truncated_sample)
from .exceptions import NumericError, ParameterError, SolverError
from .metrics import MetricReport, energy_baseline, energy_distance, moment_report
from .mixture import AnalyticDenoiser, GaussianMixture, analytic_eps, gm_marginal_at, gm_sample
from .network import AdapterDenoiser, grad_check, mlp_predict_eps, train_denoiser
from .refiner import DiffusionRefiner
from .schedule import NoiseSchedule, ddpm_sigma, make_linear_schedule

__version__ = "0.1.0"
