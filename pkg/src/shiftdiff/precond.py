"""Denoiser preconditioning, score conversion and training losses.

A raw network ``F(input, conditioner, noise_label)`` is wrapped into a
denoiser of the unshifted, unscaled variable,

    D(x, t) = c_skip(t) x + c_out(t) F(c_in(t) x + c_shift, y, c_noise(t)).

Two flavors are provided. ``"sgmse"`` is the parametrization implied by the
score-matching loss of the OUVE-based speech enhancement model
(``c_skip = 1``, ``c_out = -s sigma_hat^2 / t``, ``c_in = s``,
``c_shift = y``, ``c_noise = log t``, weight ``1 / sigma_hat^2``). ``"edm"``
uses the first-principles coefficients written in terms of ``sigma_hat`` with
``c_shift = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernel import standard_noise
from .schedule import NoiseSchedule, check_time

__all__ = [
    "SGMSE",
    "EDM",
    "Preconditioning",
    "make_preconditioning",
    "Denoiser",
    "wrap_denoiser",
    "denoiser_to_score",
    "denoising_loss",
    "score_matching_loss",
]

SGMSE = "sgmse"
EDM = "edm"

RawNetwork = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True, eq=False)
class Preconditioning:
    flavor: str
    schedule: NoiseSchedule
    sigma_data: float | None = None
    y: np.ndarray | None = None

    # EDM coefficients depend on t only through sigma_hat
    def edm_coefficients(self, sigma_hat: float):
        sd2 = self.sigma_data**2
        var = sigma_hat**2 + sd2
        c_skip = sd2 / var
        c_out = sigma_hat * self.sigma_data / math.sqrt(var)
        c_in = 1.0 / math.sqrt(var)
        with np.errstate(divide="ignore"):
            c_noise = 0.25 * np.log(sigma_hat)
        return c_skip, c_out, c_in, float(c_noise)

    def coefficients(self, t: float):
        """``(c_skip, c_out, c_in, c_noise)`` at time ``t``."""
        t = float(check_time(t))
        if self.flavor == EDM:
            return self.edm_coefficients(self.schedule.sigma_hat(t))
        s = self.schedule.scaling(t)
        c_out = -s * self.schedule.sigma_hat_sq(t) / t
        return 1.0, c_out, s, math.log(t)

    def c_skip(self, t):
        return self.coefficients(t)[0]

    def c_out(self, t):
        return self.coefficients(t)[1]

    def c_in(self, t):
        return self.coefficients(t)[2]

    def c_noise(self, t):
        return self.coefficients(t)[3]

    @property
    def c_shift(self):
        if self.flavor == EDM:
            return 0.0 if self.y is None else np.zeros_like(self.y)
        return self.y

    def weight(self, t) -> float:
        """Loss weight ``w(t)``."""
        sh2 = self.schedule.sigma_hat_sq(t)
        if self.flavor == EDM:
            sd2 = self.sigma_data**2
            return (sh2 + sd2) / (sh2 * sd2)
        return 1.0 / sh2


def make_preconditioning(
    flavor: str, schedule: NoiseSchedule, sigma_data: float | None = None, y=None
) -> Preconditioning:
    flavor = flavor.lower()
    if flavor == EDM:
        if sigma_data is None or not sigma_data > 0:
            raise ValueError("EDM preconditioning needs sigma_data > 0")
    elif flavor == SGMSE:
        if y is None:
            raise ValueError("SGMSE preconditioning needs the conditioner y as c_shift")
    else:
        raise ValueError(f"unknown preconditioning flavor {flavor!r}")
    y = None if y is None else np.asarray(y)
    return Preconditioning(flavor, schedule, sigma_data, y)


class Denoiser:
    """Preconditioned network acting on ``(x - y) / s(t)``."""

    def __init__(self, raw: RawNetwork, precond: Preconditioning, y):
        self.raw = raw
        self.precond = precond
        self.y = np.asarray(y)

    def _apply(self, x, c_skip, c_out, c_in, c_noise):
        x = np.asarray(x)
        if c_out == 0.0:
            return c_skip * x
        return c_skip * x + c_out * self.raw(c_in * x + self.precond.c_shift, self.y, c_noise)

    def __call__(self, x, t):
        return self._apply(x, *self.precond.coefficients(t))

    def at_sigma(self, x, sigma_hat):
        if self.precond.flavor == EDM:
            return self._apply(x, *self.precond.edm_coefficients(sigma_hat))
        return self(x, self.precond.schedule.time_at(sigma_hat))


def wrap_denoiser(raw: RawNetwork, precond: Preconditioning, y) -> Denoiser:
    return Denoiser(raw, precond, y)


def denoiser_to_score(denoiser, schedule: NoiseSchedule, x_t, y, t):
    """Conditional score ``grad log p_t(x_t | y)`` from a denoiser.

    The denoiser is evaluated on ``(x_t - y) / s(t)``; the result is
    ``(D - x) / (s sigma_hat^2)``.
    """
    t = float(check_time(t))
    if t == 0.0:
        raise ZeroDivisionError("score is undefined at t = 0")
    s = schedule.scaling(t)
    x = (np.asarray(x_t) - y) / s
    return (denoiser(x, t) - x) / (s * schedule.sigma_hat_sq(t))


def _draw(noise, like, rng):
    if noise is not None:
        return np.asarray(noise)
    if rng is None:
        raise ValueError("either rng or an explicit noise draw is required")
    return standard_noise(np.shape(like), rng, np.iscomplexobj(like))


def denoising_loss(
    denoiser, x0, y, schedule: NoiseSchedule, t, rng=None, *, weight=None, noise=None
) -> float:
    """``w(t) |D(x0 - y + sigma_hat z, t) - (x0 - y)|^2`` for one draw ``z``.

    ``weight`` defaults to the denoiser's preconditioning weight.
    """
    x_tilde = np.asarray(x0) - y
    z = _draw(noise, x_tilde, rng)
    if weight is None:
        weight = denoiser.precond.weight(t)
    residual = denoiser(x_tilde + schedule.sigma_hat(t) * z, t) - x_tilde
    return float(weight * np.sum(np.abs(residual) ** 2))


def score_matching_loss(
    raw: RawNetwork, x0, y, schedule: NoiseSchedule, t, rng=None, *, noise=None
) -> float:
    """``|sigma(t) score(x_t) + z|^2`` with ``score = -F(x_t, y, log t) / t``."""
    t = float(check_time(t))
    x0 = np.asarray(x0)
    z = _draw(noise, x0, rng)
    s = schedule.scaling(t)
    sigma = schedule.sigma(t)
    x_t = s * (x0 - y) + y + sigma * z
    score = -raw(x_t, y, math.log(t)) / t
    return float(np.sum(np.abs(sigma * score + z) ** 2))
