import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from shiftdiff.oracle import IsotropicGaussian, OracleDenoiser, PointMass, wasserstein1
from shiftdiff.precond import denoiser_to_score
from shiftdiff.sampler import (
    MAX_CHURN,
    SamplerConfig,
    churn_gamma,
    euler_maruyama_step,
    heun_edm_step,
    init_prior,
    langevin_correct,
    pc_step,
    run_sampler,
    sample_many,
)
from shiftdiff.schedule import OUVE, VE, NoiseSchedule


@dataclass(frozen=True)
class Still(NoiseSchedule):
    """No drift, no diffusion."""

    name = "still"

    def _scaling(self, t):
        return np.ones_like(t)

    def _sigma_hat_sq(self, t):
        return np.zeros_like(t)

    def _drift(self, t):
        return np.zeros_like(t)

    def _diffusion(self, t):
        return np.zeros_like(t)


GAUSS = IsotropicGaussian([0.0], 1.0)


def gaussian_score(data, schedule, y):
    oracle = OracleDenoiser(data, schedule, y)
    return lambda x, t: denoiser_to_score(oracle, schedule, x, y, t)


def test_config_validation_and_grid():
    grid = SamplerConfig(n_steps=4).time_grid()
    assert grid[0] == 1.0 and grid[-1] == 0.01 and len(grid) == 5
    assert np.allclose(np.diff(grid), -0.2475)
    for bad in (
        {"n_steps": 0},
        {"method": "ddim"},
        {"t_end": 1.0},
        {"r": -0.1},
        {"s_churn": -1.0},
    ):
        with pytest.raises(ValueError):
            SamplerConfig(**bad)


def test_prior_degenerate_and_seeded():
    y = np.array([0.2, -0.4])
    assert np.array_equal(init_prior(y, Still(), np.random.default_rng(0)), y)
    a = init_prior(y, OUVE(), np.random.default_rng(3), n=5)
    b = init_prior(y, OUVE(), np.random.default_rng(3), n=5)
    assert a.shape == (5, 2) and np.array_equal(a, b)


def test_prior_mean():
    s = VE()
    n = 100_000
    draws = init_prior(np.array([0.5]), s, np.random.default_rng(1), n=n)
    assert abs(draws.mean() - 0.5) < 4 * s.sigma(1.0) / math.sqrt(n)
    assert draws.std() == pytest.approx(s.sigma(1.0), rel=0.01)


def test_prior_complex():
    y = np.zeros(4, complex)
    draws = init_prior(y, VE(), np.random.default_rng(0), n=50_000)
    assert np.iscomplexobj(draws)
    assert np.mean(np.abs(draws) ** 2) == pytest.approx(VE().sigma(1.0) ** 2, rel=0.02)


def test_em_without_dynamics_is_identity():
    x = np.array([[0.3, 1.0]])
    out = euler_maruyama_step(x, 0.6, 0.5, lambda v, t: np.ones_like(v), Still(), 0.0, np.random.default_rng(0))
    assert np.array_equal(out, x)


def test_em_contracts_toward_point_mass():
    s = VE()
    y = np.zeros(1)
    score = gaussian_score(PointMass([0.7]), s, y)
    config = SamplerConfig(method="em", n_steps=200)
    traj = run_sampler(config, y, s, np.random.default_rng(0), score_fn=score, n_samples=4000)
    dist = [np.mean(np.abs(x - 0.7)) for x in traj.states[::25]]
    assert np.all(np.diff(dist) < 0)
    assert np.mean(np.abs(traj.final - 0.7)) < 0.05


def test_probability_flow_first_order_in_step():
    s = VE()
    mu, sd = 0.5, 0.8
    score = lambda x, t: (mu - x) / (sd**2 + s.sigma_hat_sq(t))  # noqa: E731
    x1 = np.linspace(-3, 3, 13)[:, None]
    exact = mu + (x1 - mu) * math.sqrt((sd**2 + s.sigma_hat_sq(0.01)) / (sd**2 + s.sigma_hat_sq(1.0)))
    errors = []
    for n in (100, 200, 400):
        x = x1.copy()
        grid = np.linspace(1.0, 0.01, n + 1)
        for a, b in zip(grid[:-1], grid[1:]):
            x = euler_maruyama_step(x, a, b, score, s, 0.0, None, probability_flow=True)
        errors.append(np.max(np.abs(x - exact)))
    assert errors[0] < 0.05
    assert 1.6 < errors[0] / errors[1] < 2.4
    assert 1.6 < errors[1] / errors[2] < 2.4


def test_pc_with_zero_r_equals_em():
    s = OUVE()
    y = np.array([0.1, 0.2, 0.3])
    score = gaussian_score(IsotropicGaussian([0.0, 0.5, 1.0], 0.5), s, y)
    x = np.random.default_rng(0).standard_normal((100, 3))
    a = pc_step(x, 0.6, 0.5, score, s, y, np.random.default_rng(9), r=0.0)
    b = euler_maruyama_step(x, 0.6, 0.5, score, s, y, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_langevin_zero_score_guard():
    x = np.ones((3, 2))
    out = langevin_correct(x, 0.5, lambda v, t: np.zeros_like(v), np.random.default_rng(0))
    assert np.array_equal(out, x)


def test_langevin_drifts_to_marginal():
    s = VE()
    t = 0.5
    var = 1.0 + s.sigma_hat_sq(t)
    score = lambda x, t: -x / var  # noqa: E731
    rng = np.random.default_rng(5)
    x = 3.0 + 0.1 * rng.standard_normal((200, 50))
    target = stats.norm(scale=math.sqrt(var)).cdf
    ks = [stats.kstest(x.ravel(), target).statistic]
    for _ in range(4):
        for _ in range(10):
            x = langevin_correct(x, t, score, rng, r=0.5)
        ks.append(stats.kstest(x.ravel(), target).statistic)
    # falls until the step-size bias floor, then stays there
    assert ks[0] > ks[1] > ks[2]
    assert max(ks[2:]) - min(ks[2:]) < 0.01
    assert ks[-1] < 0.05


def test_pc_reproducible():
    s = VE()
    y = np.zeros(1)
    score = gaussian_score(GAUSS, s, y)
    config = SamplerConfig(method="pc", n_steps=10)
    a = run_sampler(config, y, s, np.random.default_rng(4), score_fn=score, n_samples=50)
    b = run_sampler(config, y, s, np.random.default_rng(4), score_fn=score, n_samples=50)
    assert np.array_equal(a.final, b.final)


@settings(max_examples=300, deadline=None)
@given(
    s_churn=st.one_of(st.floats(0, 1e6), st.just(math.inf)),
    n=st.integers(1, 1000),
    sh=st.floats(0, 100),
)
def test_churn_never_exceeds_clamp(s_churn, n, sh):
    g = churn_gamma(s_churn, n, sh)
    assert 0.0 <= g <= MAX_CHURN


def test_churn_values():
    assert churn_gamma(math.inf, 64, 1.0) == pytest.approx(0.414214, abs=1e-6)
    assert churn_gamma(6.4, 64, 1.0) == pytest.approx(0.1)
    assert churn_gamma(10.0, 10, 0.5, s_min=1.0) == 0.0
    assert churn_gamma(10.0, 10, 2.0, s_max=1.0) == 0.0


def test_heun_point_mass_single_step_exact():
    s = VE()
    for mu, y in [(0.7, 0.0), (-1.25, 0.4)]:
        y_vec = np.array([y])
        oracle = OracleDenoiser(PointMass([mu]), s, y_vec)
        config = SamplerConfig(method="heun", n_steps=1)
        traj = run_sampler(config, y_vec, s, np.random.default_rng(0), denoiser=oracle, n_samples=20)
        assert np.all(traj.final == mu)


def test_heun_step_to_zero_skips_correction():
    calls = []

    def denoiser(x, sh):
        calls.append(sh)
        return np.zeros_like(x)

    out = heun_edm_step(np.array([2.0]), 1.0, 0.0, denoiser, None)
    assert out[0] == 0.0 and calls == [1.0]


def test_trajectory_contract():
    s = OUVE()
    y = np.array([0.3])
    for method in ("heun", "em", "pc"):
        config = SamplerConfig(method=method, n_steps=7)
        traj = run_sampler(
            config, y, s, np.random.default_rng(1),
            denoiser=OracleDenoiser(GAUSS, s, y), n_samples=3,
        )
        assert len(traj.states) == len(traj.times) == 8
        assert traj.times[0] == 1.0 and traj.times[-1] == pytest.approx(0.01)
        assert np.array_equal(traj.states[0], init_prior(y, s, np.random.default_rng(1), 3))


def test_sampler_argument_errors():
    s = OUVE()
    y = np.zeros(1)
    oracle = OracleDenoiser(GAUSS, s, y)
    with pytest.raises(ValueError):
        run_sampler(SamplerConfig(), y, s, np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_sampler(SamplerConfig(), y, s, np.random.default_rng(0), denoiser=oracle, score_fn=lambda x, t: x)
    with pytest.raises(ValueError):
        run_sampler(SamplerConfig(method="heun"), y, s, np.random.default_rng(0), score_fn=lambda x, t: x)


def test_deterministic_heun_ignores_random_stream_after_prior():
    s = VE()
    y = np.zeros(1)
    oracle = OracleDenoiser(GAUSS, s, y)
    sigmas = s.sigma_hat(SamplerConfig().time_grid())
    x0 = np.random.default_rng(0).standard_normal((10, 1)) * sigmas[0]
    runs = []
    for seed in (1, 2):
        rng = np.random.default_rng(seed)
        x = x0
        for a, b in zip(sigmas[:-1], sigmas[1:]):
            x = heun_edm_step(x, a, b, oracle.at_sigma, rng)
        runs.append(x)
    assert np.array_equal(runs[0], runs[1])


def test_deterministic_heun_transports_the_prior():
    # the exact flow carries N(0, sh1^2) to variance sh1^2 / ((1 + sh1^2)(1 + she^2)) after the final denoise
    s = VE()
    y = np.zeros(1)
    n = 10_000
    samples = sample_many(
        SamplerConfig(n_steps=64), y, s, 0, n, denoiser=OracleDenoiser(GAUSS, s, y)
    )
    sh1, she = s.sigma_hat(1.0), s.sigma_hat(0.01)
    expected = sh1**2 / ((1 + sh1**2) * (1 + she**2))
    assert samples.var() == pytest.approx(expected, abs=4 * expected * math.sqrt(2 / n))


@pytest.mark.parametrize("schedule", [VE(), OUVE()], ids=["ve", "ouve"])
@pytest.mark.parametrize("y", [0.0, 0.5])
def test_drift_role_recovers_data(schedule, y):
    n = 10_000
    y_vec = np.array([y])
    samples = sample_many(
        SamplerConfig(n_steps=64, s_churn=math.inf), y_vec, schedule, 1, n,
        denoiser=OracleDenoiser(GAUSS, schedule, y_vec),
    )
    assert abs(samples.mean()) < 4 / math.sqrt(n)
    assert abs(samples.var() - 1.0) < 4 * math.sqrt(2 / n)


def test_wasserstein_falls_with_steps():
    s = OUVE()
    y = np.zeros(1)
    oracle = OracleDenoiser(GAUSS, s, y)
    w = []
    for n_steps in (4, 16, 64):
        x = sample_many(SamplerConfig(n_steps=n_steps, s_churn=math.inf), y, s, 2, 10_000, denoiser=oracle)
        w.append(wasserstein1(x, GAUSS))
    assert w[1] <= w[0] + 0.01 and w[2] <= w[1] + 0.01


def test_sample_many_independent_of_workers():
    s = OUVE()
    y = np.zeros(1)
    oracle = OracleDenoiser(GAUSS, s, y)
    config = SamplerConfig(n_steps=8, s_churn=5.0)
    a = sample_many(config, y, s, 7, 3000, denoiser=oracle, chunk_size=500, workers=1)
    b = sample_many(config, y, s, 7, 3000, denoiser=oracle, chunk_size=500, workers=4)
    assert a.shape == (3000, 1) and np.array_equal(a, b)
