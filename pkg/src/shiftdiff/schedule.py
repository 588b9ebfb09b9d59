r"""Noise schedules for diffusion processes with a non-zero long-term mean.

Every schedule describes the SDE

.. math:: dx_t = f(t) (x_t - y) dt + g(t) dw

through the equivalent bundle of kernel parameters: the scaling
:math:`s(t) = \exp \int_0^t f` and the unscaled standard deviation
:math:`\hat\sigma(t)` with :math:`\hat\sigma^2(t) = \int_0^t g^2 / s^2`. The
perturbation kernel is Gaussian with mean :math:`s(t)(x_0 - y) + y` and
standard deviation :math:`\sigma(t) = s(t) \hat\sigma(t)`.

All methods accept a scalar or an array of times in ``[0, 1]``.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "NoiseSchedule",
    "OUVE",
    "OUVE2",
    "VE",
    "OUVP",
    "VP",
    "Cosine",
    "check_time",
    "eval_scaling",
    "eval_sigma_hat",
    "eval_drift_diffusion",
    "log_snr",
    "consistency_check",
    "ConsistencyReport",
]

# sigma_hat floor used for the log-SNR at t = 0
_SIGMA_HAT_FLOOR = 1e-300


def check_time(t):
    """Return ``t`` as a float array, rejecting values outside ``[0, 1]``."""
    arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"diffusion time must lie in [0, 1], got {t!r}")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


class NoiseSchedule(abc.ABC):
    """Joint parametrization of drift, diffusion and kernel parameters."""

    name: str = ""

    @abc.abstractmethod
    def _scaling(self, t: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def _sigma_hat_sq(self, t: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def _drift(self, t: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def _diffusion(self, t: np.ndarray) -> np.ndarray: ...

    def scaling(self, t):
        """Mean scale ``s(t)``."""
        return _out(self._scaling(check_time(t)))

    def sigma_hat_sq(self, t):
        return _out(self._sigma_hat_sq(check_time(t)))

    def sigma_hat(self, t):
        """Standard deviation of the unscaled process."""
        return _out(np.sqrt(self._sigma_hat_sq(check_time(t))))

    def sigma(self, t):
        """Kernel standard deviation ``s(t) * sigma_hat(t)``."""
        t = check_time(t)
        return _out(self._scaling(t) * np.sqrt(self._sigma_hat_sq(t)))

    def drift(self, t):
        """Drift coefficient ``f(t)``; the SDE drift is ``f(t) (x - y)``."""
        return _out(self._drift(check_time(t)))

    def diffusion(self, t):
        """Diffusion coefficient ``g(t)``."""
        return _out(self._diffusion(check_time(t)))

    def log_snr(self, t):
        """``log(s^2 / sigma^2) = -log sigma_hat^2``, finite at ``t = 0``."""
        t = check_time(t)
        sh = np.maximum(np.sqrt(self._sigma_hat_sq(t)), _SIGMA_HAT_FLOOR)
        return _out(-2.0 * np.log(sh))

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Interior times where ``f`` or ``g`` are not smooth."""
        return ()

    def time_at(self, sigma_hat: float) -> float:
        """Invert ``sigma_hat(t)``; values beyond ``sigma_hat(1)`` map to 1."""
        if sigma_hat <= 0.0:
            return 0.0
        top = float(np.sqrt(self._sigma_hat_sq(np.asarray(1.0))))
        if sigma_hat >= top:
            return 1.0
        target = sigma_hat * sigma_hat
        return brentq(
            lambda u: float(self._sigma_hat_sq(np.asarray(u))) - target,
            0.0,
            1.0,
            xtol=1e-15,
            rtol=4 * np.finfo(float).eps,
        )

    def spec(self) -> str:
        """Plain-text form ``family:key=value,...`` understood by the CLI."""
        return self.name


def _check_ordered(lo: float, hi: float, names: str) -> None:
    if not (0.0 < lo < hi):
        raise ValueError(f"{names} must satisfy 0 < min < max, got {lo}, {hi}")


@dataclass(frozen=True)
class OUVE(NoiseSchedule):
    """Ornstein-Uhlenbeck drift with the VE diffusion coefficient.

    ``g(t)`` is the VE coefficient, so ``sigma_hat`` picks up the stiffness
    through ``1 / s^2`` inside the integral.
    """

    sigma_min: float = 0.05
    sigma_max: float = 0.5
    gamma: float = 1.5
    name = "ouve"

    def __post_init__(self):
        _check_ordered(self.sigma_min, self.sigma_max, "sigma")
        if self.gamma < 0:
            raise ValueError("stiffness gamma must be non-negative")

    @property
    def _log_ratio(self) -> float:
        return math.log(self.sigma_max / self.sigma_min)

    def _scaling(self, t):
        return np.exp(-self.gamma * t)

    def _sigma_hat_sq(self, t):
        lr = self._log_ratio
        c = self.sigma_min**2 / (1.0 + self.gamma / lr)
        return c * np.expm1(2.0 * t * (self.gamma + lr))

    def _drift(self, t):
        return np.full_like(t, -self.gamma) + 0.0

    def _diffusion(self, t):
        lr = self._log_ratio
        return self.sigma_min * np.exp(t * lr) * math.sqrt(2.0 * lr)

    def spec(self):
        return f"ouve:smin={self.sigma_min!r},smax={self.sigma_max!r},gamma={self.gamma!r}"


@dataclass(frozen=True)
class OUVE2(NoiseSchedule):
    """OU scaling ``exp(-gamma t)`` on top of the VE unscaled variance."""

    sigma_min: float = 0.04
    sigma_max: float = 1.7
    gamma: float = 1.5
    name = "ouve2"

    def __post_init__(self):
        _check_ordered(self.sigma_min, self.sigma_max, "sigma")
        if self.gamma < 0:
            raise ValueError("stiffness gamma must be non-negative")

    @property
    def _log_ratio(self) -> float:
        return math.log(self.sigma_max / self.sigma_min)

    def _scaling(self, t):
        return np.exp(-self.gamma * t)

    def _sigma_hat_sq(self, t):
        return self.sigma_min**2 * np.expm1(2.0 * t * self._log_ratio)

    def _drift(self, t):
        return np.full_like(t, -self.gamma) + 0.0

    def _diffusion(self, t):
        lr = self._log_ratio
        return np.exp(-self.gamma * t) * self.sigma_min * np.exp(t * lr) * math.sqrt(2.0 * lr)

    def spec(self):
        return f"ouve2:smin={self.sigma_min!r},smax={self.sigma_max!r},gamma={self.gamma!r}"


@dataclass(frozen=True)
class VE(OUVE2):
    """Variance exploding schedule: ``OUVE2`` without drift."""

    sigma_min: float = 0.04
    sigma_max: float = 1.7
    gamma: float = field(default=0.0, init=False)
    name = "ve"

    def spec(self):
        return f"ve:smin={self.sigma_min!r},smax={self.sigma_max!r}"


@dataclass(frozen=True)
class OUVP(NoiseSchedule):
    """Linear-beta VP schedule with an extra OU scaling ``exp(-gamma t)``."""

    beta_min: float = 0.01
    beta_max: float = 1.0
    gamma: float = 1.5
    name = "ouvp"

    def __post_init__(self):
        _check_ordered(self.beta_min, self.beta_max, "beta")
        if self.gamma < 0:
            raise ValueError("stiffness gamma must be non-negative")

    def _beta(self, t):
        return self.beta_min + t * (self.beta_max - self.beta_min)

    def _beta_integral(self, t):
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t

    def _scaling(self, t):
        return np.exp(-self.gamma * t - 0.5 * self._beta_integral(t))

    def _sigma_hat_sq(self, t):
        return np.expm1(self._beta_integral(t))

    def _drift(self, t):
        return -self.gamma - 0.5 * self._beta(t)

    def _diffusion(self, t):
        return np.exp(-self.gamma * t) * np.sqrt(self._beta(t))

    def spec(self):
        return f"ouvp:bmin={self.beta_min!r},bmax={self.beta_max!r},gamma={self.gamma!r}"


@dataclass(frozen=True)
class VP(OUVP):
    """Variance preserving schedule with linear ``beta(t)``."""

    beta_min: float = 0.01
    beta_max: float = 1.0
    gamma: float = field(default=0.0, init=False)
    name = "vp"

    def spec(self):
        return f"vp:bmin={self.beta_min!r},bmax={self.beta_max!r}"


@dataclass(frozen=True)
class Cosine(NoiseSchedule):
    """Shifted cosine log-SNR schedule under the VP constraint.

    The unclamped schedule has ``lambda(t) = 2 nu - 2 log tan(pi t / 2)``.
    Both clamps are applied to the dynamics, so ``(f, g)`` and ``(s, sigma_hat)``
    stay tied together:

    * past ``t_beta`` the rate ``beta = -2 f`` is held at ``beta_max`` and the
      kernel follows the VP integrals of the capped rate;
    * past ``t_lambda`` (where the log-SNR reaches ``lambda_min``) the state is
      frozen, ``f = g = 0``.

    With the default parameters only the rate cap is active (from t ~ 0.88).
    ``beta_max=inf`` recovers the plain cosine schedule clamped at
    ``lambda_min`` near ``t = 1``.
    """

    nu: float = 1.5
    lambda_min: float = -12.0
    beta_max: float = 10.0
    name = "cosine"
    t_beta: float = field(init=False, repr=False, compare=False, default=math.inf)
    t_lambda: float = field(init=False, repr=False, compare=False, default=math.inf)
    _b_at_beta: float = field(init=False, repr=False, compare=False, default=math.inf)

    def __post_init__(self):
        if not self.beta_max > 0:
            raise ValueError("beta_max must be positive")
        t_beta = math.inf
        if math.isfinite(self.beta_max):
            t_beta = brentq(
                lambda u: self._raw_beta(u) - self.beta_max, 1e-9, 1.0, xtol=1e-15
            )
            object.__setattr__(self, "_b_at_beta", float(self._raw_b(t_beta)))
        object.__setattr__(self, "t_beta", t_beta)

        t_lambda = math.inf
        if self._free_lambda(1.0) < self.lambda_min:
            t_lambda = brentq(
                lambda u: self._free_lambda(u) - self.lambda_min, 1e-9, 1.0, xtol=1e-15
            )
        object.__setattr__(self, "t_lambda", t_lambda)

    # unclamped closed forms ------------------------------------------------
    def _raw_lambda(self, t):
        with np.errstate(divide="ignore"):
            return 2.0 * self.nu - 2.0 * np.log(np.tan(0.5 * np.pi * t))

    def _raw_beta(self, t):
        # 2 pi csc(pi t) / (1 + e^{2 nu} cot^2(pi t / 2)), rewritten to stay finite at t = 0
        x = 0.5 * np.pi * np.asarray(t, dtype=float)
        k = math.exp(-2.0 * self.nu)
        return np.pi * k * np.tan(x) / (np.cos(x) ** 2 + k * np.sin(x) ** 2)

    def _raw_b(self, t):
        # integral of the raw beta: -2 log s = log(1 + e^{-lambda})
        return np.logaddexp(0.0, -self._raw_lambda(t))

    # rate-capped schedule, before the log-SNR freeze ------------------------
    def _free_b(self, t):
        t = np.asarray(t, dtype=float)
        if not math.isfinite(self.t_beta):
            return self._raw_b(t)
        capped = self._b_at_beta + self.beta_max * (t - self.t_beta)
        return np.where(t <= self.t_beta, self._raw_b(np.minimum(t, self.t_beta)), capped)

    def _free_sigma_hat_sq(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(over="ignore"):
            raw = np.exp(-self._raw_lambda(np.minimum(t, min(self.t_beta, 1.0))))
        if not math.isfinite(self.t_beta):
            return raw
        return np.where(t <= self.t_beta, raw, np.expm1(self._free_b(t)))

    def _free_lambda(self, t):
        return float(-np.log(self._free_sigma_hat_sq(np.asarray(t, dtype=float))))

    # clamped schedule --------------------------------------------------------
    def _frozen(self, t):
        return np.minimum(t, self.t_lambda)

    def _scaling(self, t):
        return np.exp(-0.5 * self._free_b(self._frozen(t)))

    def _sigma_hat_sq(self, t):
        return self._free_sigma_hat_sq(self._frozen(t))

    def _beta(self, t):
        t = np.asarray(t, dtype=float)
        beta = np.where(t < self.t_beta, self._raw_beta(np.minimum(t, 1.0)), self.beta_max)
        return np.where(t < self.t_lambda, beta, 0.0)

    def _drift(self, t):
        return -0.5 * self._beta(t)

    def _diffusion(self, t):
        return np.sqrt(self._beta(t))

    def log_snr(self, t):
        return _out(np.maximum(super().log_snr(t), self.lambda_min))

    @property
    def breakpoints(self):
        return tuple(b for b in (self.t_beta, self.t_lambda) if 0.0 < b < 1.0)

    def spec(self):
        return f"cosine:nu={self.nu!r},lmin={self.lambda_min!r},bmax={self.beta_max!r}"


# Functional views ------------------------------------------------------------


def eval_scaling(schedule: NoiseSchedule, t):
    return schedule.scaling(t)


def eval_sigma_hat(schedule: NoiseSchedule, t):
    return schedule.sigma_hat(t)


def eval_drift_diffusion(schedule: NoiseSchedule, t):
    return schedule.drift(t), schedule.diffusion(t)


def log_snr(schedule: NoiseSchedule, t):
    return schedule.log_snr(t)


@dataclass(frozen=True)
class ConsistencyReport:
    max_drift_error: float
    max_diffusion_error: float


def consistency_check(schedule: NoiseSchedule, grid, h: float = 1e-5) -> ConsistencyReport:
    """Compare closed-form ``(f, g)`` with central differences of ``(s, sigma_hat^2)``.

    Checks ``f = d log s / dt`` and ``g^2 = s^2 d sigma_hat^2 / dt`` on ``grid``.
    """
    t = check_time(grid)
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    if np.any(t - h < 0) or np.any(t + h > 1):
        raise ValueError("grid must stay at least h away from 0 and 1")
    dlog_s = (np.log(schedule.scaling(t + h)) - np.log(schedule.scaling(t - h))) / (2 * h)
    dvar = (schedule.sigma_hat_sq(t + h) - schedule.sigma_hat_sq(t - h)) / (2 * h)
    f = schedule.drift(t)
    g = schedule.diffusion(t)
    s = schedule.scaling(t)
    return ConsistencyReport(
        max_drift_error=float(np.max(np.abs(f - dlog_s))),
        max_diffusion_error=float(np.max(np.abs(g**2 - s**2 * dvar))),
    )
