"""Reverse-process samplers for the shifted SDE.

Three integrators share one uniform time grid from ``t_start`` down to
``t_end``:

* ``em``: reverse Euler-Maruyama on ``dx = [f (x - y) - g^2 score] dt + g dw``;
* ``pc``: the same predictor followed by annealed Langevin corrections;
* ``heun``: the stochastic second-order sampler run on the unshifted,
  unscaled variable ``(x - y) / s(t)`` with a denoiser.

The prior is ``N(y, sigma(1)^2 I)``. Arrays carry the state dimension on the
last axis; leading axes are independent samples.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kernel import standard_noise
from .precond import denoiser_to_score
from .schedule import NoiseSchedule

__all__ = [
    "MAX_CHURN",
    "SamplerConfig",
    "Trajectory",
    "init_prior",
    "euler_maruyama_step",
    "langevin_correct",
    "pc_step",
    "churn_gamma",
    "heun_edm_step",
    "run_sampler",
    "sample_many",
]

MAX_CHURN = math.sqrt(2.0) - 1.0
METHODS = ("em", "pc", "heun")


@dataclass(frozen=True)
class SamplerConfig:
    method: str = "heun"
    n_steps: int = 64
    t_start: float = 1.0
    t_end: float = 0.01
    # predictor-corrector
    r: float = 0.5
    n_corrector: int = 1
    # stochastic Heun
    s_churn: float = 0.0
    s_noise: float = 1.0
    s_min: float = 0.0
    s_max: float = math.inf
    # Euler-Maruyama only: integrate the probability-flow ODE instead
    probability_flow: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown sampler {self.method!r}; choose from {METHODS}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")
        if not 0.0 <= self.t_end < self.t_start <= 1.0:
            raise ValueError("need 0 <= t_end < t_start <= 1")
        if self.r < 0 or self.s_churn < 0 or self.n_corrector < 0:
            raise ValueError("r, s_churn and n_corrector must be non-negative")

    def time_grid(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    states: list[np.ndarray] = field(default_factory=list)
    final: np.ndarray | None = None

    def record(self, t, x):
        self.times.append(float(t))
        self.states.append(np.array(x, copy=True))


def init_prior(y, schedule: NoiseSchedule, rng: np.random.Generator, n: int | None = None):
    """Draw from ``N(y, sigma(1)^2 I)``; ``n`` adds a leading sample axis."""
    y = np.asarray(y)
    shape = y.shape if n is None else (n, *y.shape)
    sigma1 = schedule.sigma(1.0)
    if sigma1 == 0.0:
        return np.broadcast_to(y, shape).copy()
    return y + sigma1 * standard_noise(shape, rng, np.iscomplexobj(y))


def euler_maruyama_step(
    x, t_from, t_to, score_fn, schedule: NoiseSchedule, y, rng, *, probability_flow=False
):
    """One reverse step from ``t_from`` to ``t_to < t_from``.

    Coefficients are frozen at ``t_from``. With ``probability_flow`` the
    drift uses half the score term and no noise is added.
    """
    dt = t_to - t_from
    f = schedule.drift(t_from)
    g = schedule.diffusion(t_from)
    score = score_fn(x, t_from)
    if probability_flow:
        return x + (f * (x - y) - 0.5 * g * g * score) * dt
    z = standard_noise(np.shape(x), rng, np.iscomplexobj(x))
    return x + (f * (x - y) - g * g * score) * dt + g * math.sqrt(-dt) * z


def _mean_norm(v) -> float:
    """Euclidean norm over the last axis, averaged over any leading sample axes."""
    return float(np.mean(np.sqrt(np.sum(np.abs(v) ** 2, axis=-1))))


def langevin_correct(x, t, score_fn, rng, *, r=0.5, n_corrector=1):
    """Annealed Langevin moves at fixed ``t``.

    The step is ``eps = 2 (r |z| / |score|)^2`` with both norms averaged over
    the batch, so a sample sitting on a mode (score near zero) cannot blow
    the step up. A zero score gives a zero step.
    """
    for _ in range(n_corrector):
        score = score_fn(x, t)
        z = standard_noise(np.shape(x), rng, np.iscomplexobj(x))
        score_norm = _mean_norm(score)
        eps = 2.0 * (r * _mean_norm(z) / score_norm) ** 2 if score_norm > 0 else 0.0
        x = x + eps * score + math.sqrt(2.0 * eps) * z
    return x


def pc_step(
    x, t_from, t_to, score_fn, schedule: NoiseSchedule, y, rng, *, r=0.5, n_corrector=1
):
    """Euler-Maruyama predictor, then ``n_corrector`` Langevin moves at ``t_to``."""
    x = euler_maruyama_step(x, t_from, t_to, score_fn, schedule, y, rng)
    if r == 0.0:
        return x
    return langevin_correct(x, t_to, score_fn, rng, r=r, n_corrector=n_corrector)


def churn_gamma(s_churn, n_steps, sigma_hat, s_min=0.0, s_max=math.inf) -> float:
    """Per-step churn, clamped at ``sqrt(2) - 1`` and zero outside ``[s_min, s_max]``."""
    if not s_min <= sigma_hat <= s_max:
        return 0.0
    return min(s_churn / n_steps, MAX_CHURN)


def heun_edm_step(x, sigma_from, sigma_to, denoiser, rng, *, churn=0.0, s_noise=1.0):
    """Stochastic Heun step in the unshifted, unscaled variable.

    ``denoiser(x, sigma_hat)`` is parametrized by the noise level. The state
    is first inflated to ``sigma_from * (1 + churn)``, then integrated to
    ``sigma_to`` with Euler plus a trapezoidal correction (skipped when
    ``sigma_to == 0``).
    """
    sigma_up = sigma_from * (1.0 + churn)
    if churn > 0.0:
        z = standard_noise(np.shape(x), rng, np.iscomplexobj(x))
        x = x + math.sqrt(sigma_up**2 - sigma_from**2) * s_noise * z
    d = (x - denoiser(x, sigma_up)) / sigma_up
    x_next = x + (sigma_to - sigma_up) * d
    if sigma_to == 0.0:
        return x_next
    d_next = (x_next - denoiser(x_next, sigma_to)) / sigma_to
    return x + (sigma_to - sigma_up) * 0.5 * (d + d_next)


def _sigma_denoiser(denoiser, schedule):
    at_sigma = getattr(denoiser, "at_sigma", None)
    if at_sigma is not None:
        return at_sigma
    return lambda x, sh: denoiser(x, schedule.time_at(sh))


def run_sampler(
    config: SamplerConfig,
    y,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    *,
    denoiser=None,
    score_fn=None,
    n_samples: int | None = None,
    keep_states: bool = True,
) -> Trajectory:
    """Integrate the reverse process from the prior at ``config.t_start``.

    Pass either ``denoiser(x, t)`` acting on ``(x - y) / s(t)`` or
    ``score_fn(x, t)`` acting on ``x``. A denoiser-driven run ends with one
    denoiser evaluation at ``t_end``; a score-driven run returns the last
    state. Snapshots are stored in the original ``x`` variable.
    """
    if (denoiser is None) == (score_fn is None):
        raise ValueError("provide exactly one of denoiser or score_fn")
    if config.method == "heun" and denoiser is None:
        raise ValueError("the Heun sampler needs a denoiser")
    y = np.asarray(y)
    times = config.time_grid()
    traj = Trajectory()

    x = init_prior(y, schedule, rng, n_samples)
    if keep_states:
        traj.record(times[0], x)

    if config.method == "heun":
        sig_denoise = _sigma_denoiser(denoiser, schedule)
        sigmas = schedule.sigma_hat(times)
        scales = schedule.scaling(times)
        xh = (x - y) / scales[0]
        for i in range(config.n_steps):
            gamma = churn_gamma(
                config.s_churn, config.n_steps, sigmas[i], config.s_min, config.s_max
            )
            xh = heun_edm_step(
                xh, sigmas[i], sigmas[i + 1], sig_denoise, rng,
                churn=gamma, s_noise=config.s_noise,
            )
            if keep_states:
                traj.record(times[i + 1], scales[i + 1] * xh + y)
        traj.final = sig_denoise(xh, sigmas[-1]) + y
        return traj

    if score_fn is None:
        score_fn = lambda v, t: denoiser_to_score(denoiser, schedule, v, y, t)  # noqa: E731
    for i in range(config.n_steps):
        if config.method == "pc":
            x = pc_step(
                x, times[i], times[i + 1], score_fn, schedule, y, rng,
                r=config.r, n_corrector=config.n_corrector,
            )
        else:
            x = euler_maruyama_step(
                x, times[i], times[i + 1], score_fn, schedule, y, rng,
                probability_flow=config.probability_flow,
            )
        if keep_states:
            traj.record(times[i + 1], x)
    if denoiser is not None:
        t_end = times[-1]
        s_end = schedule.scaling(t_end)
        traj.final = denoiser((x - y) / s_end, t_end) + y
    else:
        traj.final = x
    return traj


def sample_many(
    config: SamplerConfig,
    y,
    schedule: NoiseSchedule,
    seed: int,
    n_samples: int,
    *,
    denoiser=None,
    score_fn=None,
    chunk_size: int = 1024,
    workers: int = 1,
) -> np.ndarray:
    """Draw ``n_samples`` final estimates in fixed-size chunks.

    Chunk ``k`` always uses the ``k``-th child of ``SeedSequence(seed)``, so
    results do not depend on ``workers``.
    """
    n_chunks = -(-n_samples // chunk_size)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(chunk_size, n_samples - k * chunk_size) for k in range(n_chunks)]

    def work(k):
        rng = np.random.default_rng(children[k])
        traj = run_sampler(
            config, y, schedule, rng, denoiser=denoiser, score_fn=score_fn,
            n_samples=sizes[k], keep_states=False,
        )
        return traj.final

    if workers <= 1:
        parts = [work(k) for k in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, range(n_chunks)))
    return np.concatenate(parts, axis=0)
