"""Gaussian perturbation kernel of the shifted SDE.

For ``dx = f(t)(x - y) dt + g(t) dw`` the state at time ``t`` given the clean
signal ``x0`` is ``N(s(t)(x0 - y) + y, sigma(t)^2 I)``. Complex arrays follow
the circular convention: each coefficient has variance ``sigma^2`` split evenly
over its real and imaginary parts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule, check_time
from .spectro import complex_noise

__all__ = [
    "KernelParams",
    "kernel_params",
    "kernel_mean",
    "standard_noise",
    "sample_kernel",
    "sigma_hat_by_quadrature",
    "prior_mismatch_kl",
]

_GL_ORDER = 16


@dataclass(frozen=True)
class KernelParams:
    t: float
    mean_scale: float
    std: float


def kernel_params(schedule: NoiseSchedule, t: float) -> KernelParams:
    t = float(check_time(t))
    return KernelParams(t=t, mean_scale=schedule.scaling(t), std=schedule.sigma(t))


def _match(x0, y):
    x0 = np.asarray(x0)
    y = np.asarray(y)
    if x0.shape[-1:] != y.shape[-1:] and y.ndim > 0:
        raise ValueError(f"dimension mismatch: {x0.shape} vs {y.shape}")
    return x0, y


def kernel_mean(x0, y, params: KernelParams):
    """``s (x0 - y) + y``, written so that ``s = 1`` and ``s = 0`` are exact."""
    x0, y = _match(x0, y)
    s = params.mean_scale
    return s * x0 + (1.0 - s) * y


def standard_noise(shape, rng: np.random.Generator, complex_valued: bool = False):
    """Unit-variance noise; circular complex when ``complex_valued``."""
    if complex_valued:
        return complex_noise(shape, rng)
    return rng.standard_normal(shape)


def sample_kernel(x0, y, params: KernelParams, rng: np.random.Generator):
    mean = kernel_mean(x0, y, params)
    if params.std == 0.0:
        return mean
    z = standard_noise(mean.shape, rng, np.iscomplexobj(mean))
    return mean + params.std * z


def sigma_hat_by_quadrature(schedule: NoiseSchedule, t: float, n_points: int = 512) -> float:
    """Integrate ``g^2 / s^2`` from 0 to ``t`` with composite Gauss-Legendre.

    Uses ``n_points // 16`` equal panels of a 16-point rule. Kinks of the
    schedule (``schedule.breakpoints``) are added as panel edges so every
    panel sees a smooth integrand.
    """
    t = float(check_time(t))
    if n_points < _GL_ORDER:
        raise ValueError(f"need at least {_GL_ORDER} quadrature points")
    if t == 0.0:
        return 0.0
    edges = np.linspace(0.0, t, n_points // _GL_ORDER + 1)
    kinks = [b for b in schedule.breakpoints if 0.0 < b < t]
    edges = np.unique(np.concatenate([edges, kinks]))

    nodes, weights = np.polynomial.legendre.leggauss(_GL_ORDER)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    xs = lo + half * (nodes + 1.0)
    integrand = schedule.diffusion(xs) ** 2 / schedule.scaling(xs) ** 2
    total = float(np.sum(half * weights * integrand))
    return float(np.sqrt(total))


def prior_mismatch_kl(x0, y, schedule: NoiseSchedule) -> float:
    """KL from the terminal kernel ``p(x_1 | x0, y)`` to the prior ``N(y, sigma(1)^2 I)``.

    Both Gaussians share the covariance, so only the mean offset
    ``s(1)(x0 - y)`` contributes. Complex inputs count ``sigma^2 / 2`` per
    real coordinate.
    """
    x0, y = _match(x0, y)
    s1 = schedule.scaling(1.0)
    var = schedule.sigma(1.0) ** 2
    offset = np.sum(np.abs(s1 * (x0 - y)) ** 2)
    if offset == 0.0:
        return 0.0
    if var == 0.0:
        raise ZeroDivisionError("terminal kernel has zero variance")
    per_coord_var = var / 2.0 if np.iscomplexobj(x0) or np.iscomplexobj(y) else var
    return float(offset / (2.0 * per_coord_var))
