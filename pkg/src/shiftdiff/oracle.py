"""Toy data distributions with closed-form optimal denoisers.

States have the data dimension on the last axis, so a batch of ``n`` samples
of a ``d``-dimensional problem is an ``(n, d)`` array.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from .schedule import NoiseSchedule, check_time

__all__ = [
    "ToyData",
    "PointMass",
    "IsotropicGaussian",
    "GaussianMixture",
    "optimal_denoiser",
    "true_score",
    "OracleDenoiser",
    "AffineDenoiser",
    "fit_affine_denoiser",
    "wasserstein1",
]


class ToyData(abc.ABC):
    @property
    @abc.abstractmethod
    def dim(self) -> int: ...

    @abc.abstractmethod
    def denoise(self, x, sigma_hat: float) -> np.ndarray:
        """Posterior mean ``E[x0 | x0 + sigma_hat z = x]``."""

    @abc.abstractmethod
    def score(self, x, sigma_hat: float) -> np.ndarray:
        """Gradient of the log density of ``x0 + sigma_hat z``."""

    @abc.abstractmethod
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray: ...

    @abc.abstractmethod
    def shifted(self, y) -> "ToyData":
        """Law of ``x0 - y``."""

    @abc.abstractmethod
    def mean(self) -> np.ndarray: ...

    @abc.abstractmethod
    def variance(self) -> np.ndarray:
        """Per-coordinate variance."""

    @abc.abstractmethod
    def cdf(self, x) -> np.ndarray:
        """Marginal CDF of the first coordinate."""


def _vec(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float))


@dataclass(frozen=True, eq=False)
class PointMass(ToyData):
    mu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", _vec(self.mu))

    @property
    def dim(self):
        return self.mu.shape[0]

    def denoise(self, x, sigma_hat):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.mu, x.shape).copy()

    def score(self, x, sigma_hat):
        return (self.mu - np.asarray(x, dtype=float)) / sigma_hat**2

    def sample(self, n, rng):
        return np.tile(self.mu, (n, 1))

    def shifted(self, y):
        return PointMass(self.mu - y)

    def mean(self):
        return self.mu

    def variance(self):
        return np.zeros_like(self.mu)

    def cdf(self, x):
        return (np.asarray(x) >= self.mu[0]).astype(float)


@dataclass(frozen=True, eq=False)
class IsotropicGaussian(ToyData):
    mu: np.ndarray
    sigma0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mu", _vec(self.mu))
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")

    @property
    def dim(self):
        return self.mu.shape[0]

    def denoise(self, x, sigma_hat):
        v0, vn = self.sigma0**2, sigma_hat**2
        return (v0 * np.asarray(x, dtype=float) + vn * self.mu) / (v0 + vn)

    def score(self, x, sigma_hat):
        return (self.mu - np.asarray(x, dtype=float)) / (self.sigma0**2 + sigma_hat**2)

    def sample(self, n, rng):
        return self.mu + self.sigma0 * rng.standard_normal((n, self.dim))

    def shifted(self, y):
        return IsotropicGaussian(self.mu - y, self.sigma0)

    def mean(self):
        return self.mu

    def variance(self):
        return np.full_like(self.mu, self.sigma0**2)

    def cdf(self, x):
        return ndtr((np.asarray(x) - self.mu[0]) / self.sigma0)


@dataclass(frozen=True, eq=False)
class GaussianMixture(ToyData):
    """Mixture of isotropic Gaussians sharing the component width ``sigma0``."""

    weights: np.ndarray
    means: np.ndarray
    sigma0: float

    def __post_init__(self):
        w = _vec(self.weights)
        means = np.asarray(self.means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if means.shape[0] != w.shape[0]:
            raise ValueError("one mean per mixture weight required")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)

    @property
    def dim(self):
        return self.means.shape[1]

    def _posterior_component_mean(self, x, sigma_hat):
        # responsibility-weighted component mean; log-sum-exp keeps narrow components from underflowing
        x = np.asarray(x, dtype=float)
        var = self.sigma0**2 + sigma_hat**2
        sq = np.sum((x[..., None, :] - self.means) ** 2, axis=-1)
        with np.errstate(divide="ignore"):
            logits = np.log(self.weights) - 0.5 * sq / var
        resp = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
        return x, resp @ self.means, var

    def denoise(self, x, sigma_hat):
        x, m, var = self._posterior_component_mean(x, sigma_hat)
        return (self.sigma0**2 * x + sigma_hat**2 * m) / var

    def score(self, x, sigma_hat):
        x, m, var = self._posterior_component_mean(x, sigma_hat)
        return (m - x) / var

    def sample(self, n, rng):
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[idx] + self.sigma0 * rng.standard_normal((n, self.dim))

    def shifted(self, y):
        return GaussianMixture(self.weights, self.means - y, self.sigma0)

    def mean(self):
        return self.weights @ self.means

    def variance(self):
        m = self.mean()
        return self.sigma0**2 + self.weights @ (self.means - m) ** 2

    def cdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return ndtr((x - self.means[:, 0]) / self.sigma0) @ self.weights


def optimal_denoiser(data: ToyData, x, sigma_hat: float) -> np.ndarray:
    if sigma_hat < 0:
        raise ValueError("sigma_hat must be non-negative")
    return data.denoise(x, sigma_hat)


def true_score(data: ToyData, x, sigma_hat: float) -> np.ndarray:
    if not sigma_hat > 0:
        raise ValueError("score is undefined at sigma_hat = 0")
    return data.score(x, sigma_hat)


class OracleDenoiser:
    """Exact denoiser on the unshifted, unscaled variable ``(x - y) / s(t)``.

    Callable as ``D(x, t)``; ``at_sigma`` skips the time lookup, which keeps
    it exact for noise levels above ``sigma_hat(1)``.
    """

    def __init__(self, data: ToyData, schedule: NoiseSchedule, y):
        self.data = data.shifted(np.asarray(y, dtype=float))
        self.schedule = schedule

    def __call__(self, x, t):
        return self.data.denoise(x, self.schedule.sigma_hat(t))

    def at_sigma(self, x, sigma_hat):
        return self.data.denoise(x, sigma_hat)


@dataclass(frozen=True, eq=False)
class AffineDenoiser:
    """``D(x, t) = scale(t) x + offset(t)``, interpolated between fitted times."""

    times: np.ndarray
    scale: np.ndarray
    offset: np.ndarray

    def __call__(self, x, t):
        order = np.argsort(self.times)
        ts = self.times[order]
        a = np.interp(t, ts, self.scale[order])
        b = np.array([np.interp(t, ts, col) for col in self.offset[order].T])
        return a * np.asarray(x, dtype=float) + b


def fit_affine_denoiser(
    data_samples, t_grid, schedule: NoiseSchedule, rng: np.random.Generator
) -> AffineDenoiser:
    """Least-squares affine denoiser per time, from paired noisy/clean draws."""
    x0 = np.asarray(data_samples, dtype=float)
    if x0.ndim == 1:
        x0 = x0[:, None]
    if x0.shape[0] < 100:
        raise ValueError("need at least 100 samples")
    t_grid = check_time(np.atleast_1d(t_grid))
    scales, offsets = [], []
    for t in t_grid:
        noisy = x0 + schedule.sigma_hat(t) * rng.standard_normal(x0.shape)
        xc = noisy - noisy.mean(axis=0)
        denom = np.sum(xc * xc)
        if denom <= 0.0:
            raise np.linalg.LinAlgError("degenerate samples: zero spread in noisy inputs")
        a = np.sum(xc * (x0 - x0.mean(axis=0))) / denom
        scales.append(a)
        offsets.append(x0.mean(axis=0) - a * noisy.mean(axis=0))
    return AffineDenoiser(t_grid.copy(), np.array(scales), np.array(offsets))


def wasserstein1(samples, data: ToyData, n_grid: int = 20001) -> float:
    """W1 distance between 1-D samples and the first-coordinate law of ``data``."""
    x = np.sort(np.asarray(samples, dtype=float).reshape(len(samples), -1)[:, 0])
    if isinstance(data, PointMass):
        return float(np.mean(np.abs(x - data.mu[0])))
    spread = float(np.sqrt(data.variance()[0]))
    centre = float(data.mean()[0])
    lo = min(x[0], centre - 10 * spread)
    hi = max(x[-1], centre + 10 * spread)
    grid = np.union1d(np.linspace(lo, hi, n_grid), x)
    emp = np.searchsorted(x, grid, side="right") / len(x)
    return float(np.trapezoid(np.abs(emp - data.cdf(grid)), grid))
