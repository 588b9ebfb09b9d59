"""Shifted-SDE diffusion numerics: schedules, kernels, preconditioning, samplers."""

from .kernel import kernel_params, prior_mismatch_kl, sample_kernel, sigma_hat_by_quadrature
from .oracle import GaussianMixture, IsotropicGaussian, OracleDenoiser, PointMass
from .precond import make_preconditioning, wrap_denoiser
from .sampler import SamplerConfig, run_sampler, sample_many
from .schedule import OUVE, OUVE2, OUVP, VE, VP, Cosine, NoiseSchedule

__all__ = [
    "NoiseSchedule",
    "OUVE",
    "OUVE2",
    "VE",
    "OUVP",
    "VP",
    "Cosine",
    "kernel_params",
    "sample_kernel",
    "sigma_hat_by_quadrature",
    "prior_mismatch_kl",
    "make_preconditioning",
    "wrap_denoiser",
    "PointMass",
    "IsotropicGaussian",
    "GaussianMixture",
    "OracleDenoiser",
    "SamplerConfig",
    "run_sampler",
    "sample_many",
]

__version__ = "0.1.0"
