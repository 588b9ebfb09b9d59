import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import logsumexp

from shiftdiff.oracle import (
    GaussianMixture,
    IsotropicGaussian,
    PointMass,
    fit_affine_denoiser,
    optimal_denoiser,
    true_score,
    wasserstein1,
)
from shiftdiff.schedule import VE

MIX = GaussianMixture([0.5, 0.5], [-1.0, 1.0], 0.1)


def posterior_mean_by_quadrature(mix, x, sigma_hat):
    """Brute-force E[x0 | x0 + sigma_hat z = x] for a 1-D mixture."""

    def prior(u):
        return sum(
            w * stats.norm.pdf(u, m, mix.sigma0) for w, m in zip(mix.weights, mix.means[:, 0])
        )

    def like(u):
        return stats.norm.pdf(x, u, sigma_hat)

    breaks = list(mix.means[:, 0]) + [x]
    lo, hi = min(breaks) - 3.0, max(breaks) + 3.0
    opts = {"points": breaks, "limit": 400, "epsabs": 0, "epsrel": 1e-11}
    num = integrate.quad(lambda u: u * prior(u) * like(u), lo, hi, **opts)[0]
    den = integrate.quad(lambda u: prior(u) * like(u), lo, hi, **opts)[0]
    return num / den


def mixture_log_density(mix, x, sigma_hat):
    var = mix.sigma0**2 + sigma_hat**2
    terms = np.log(mix.weights) + stats.norm.logpdf(x, mix.means[:, 0], math.sqrt(var))
    return logsumexp(terms)


def test_point_mass():
    pm = PointMass([0.7, -0.1])
    x = np.array([[3.0, 2.0], [0.0, 0.0]])
    assert np.array_equal(optimal_denoiser(pm, x, 0.4), np.tile([0.7, -0.1], (2, 1)))
    assert true_score(PointMass([0.0]), np.array([3.0]), 1.0)[0] == -3.0


def test_gaussian_halfway_shrinkage():
    g = IsotropicGaussian([0.0], 1.0)
    assert optimal_denoiser(g, np.array([2.0]), 1.0)[0] == 1.0
    assert true_score(g, np.array([2.0]), 1.0)[0] == -1.0


def test_mixture_reference_point():
    got = optimal_denoiser(MIX, np.array([0.3]), 0.5)[0]
    assert got == pytest.approx(posterior_mean_by_quadrature(MIX, 0.3, 0.5), abs=1e-6)


def test_mixture_against_quadrature_random_points():
    rng = np.random.default_rng(8)
    for _ in range(20):
        x = rng.uniform(-2.5, 2.5)
        sh = rng.uniform(0.05, 2.0)
        got = optimal_denoiser(MIX, np.array([x]), sh)[0]
        assert got == pytest.approx(posterior_mean_by_quadrature(MIX, x, sh), abs=1e-6)


def test_mixture_score_matches_finite_difference():
    h = 1e-5
    for x in np.linspace(-2, 2, 9):
        for sh in (0.2, 0.7, 1.5):
            fd = (mixture_log_density(MIX, x + h, sh) - mixture_log_density(MIX, x - h, sh)) / (2 * h)
            assert true_score(MIX, np.array([x]), sh)[0] == pytest.approx(fd, abs=1e-6)


def test_mixture_far_query_is_stable():
    narrow = GaussianMixture([0.3, 0.7], [-1.0, 1.0], 0.01)
    out = optimal_denoiser(narrow, np.array([[40.0], [-40.0]]), 0.05)
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx((0.01**2 * 40 + 0.05**2 * 1.0) / (0.01**2 + 0.05**2))


data_strategy = st.sampled_from(
    [
        PointMass([0.5, -1.0]),
        IsotropicGaussian([0.2, 0.3], 0.7),
        GaussianMixture([0.2, 0.5, 0.3], [[-1.0, 0.0], [1.0, 1.0], [0.0, 2.0]], 0.25),
    ]
)


@settings(max_examples=200, deadline=None)
@given(
    data=data_strategy,
    x=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    sh=st.floats(0.01, 10.0),
)
def test_score_denoiser_identity(data, x, sh):
    x = np.array(x)
    lhs = sh**2 * true_score(data, x, sh) + x
    assert np.allclose(lhs, optimal_denoiser(data, x, sh), rtol=1e-12, atol=1e-12)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        GaussianMixture([0.5, 0.6], [0.0, 1.0], 0.1)
    with pytest.raises(ValueError):
        GaussianMixture([0.5, 0.5], [0.0], 0.1)
    with pytest.raises(ValueError):
        IsotropicGaussian([0.0], 0.0)
    with pytest.raises(ValueError):
        true_score(MIX, np.zeros(1), 0.0)
    with pytest.raises(ValueError):
        optimal_denoiser(MIX, np.zeros(1), -1.0)


def test_mixture_moments_and_cdf():
    assert MIX.mean()[0] == pytest.approx(0.0)
    assert MIX.variance()[0] == pytest.approx(1.01)
    assert MIX.cdf(0.0) == pytest.approx(0.5)
    draws = MIX.sample(50_000, np.random.default_rng(0))
    assert draws.var() == pytest.approx(1.01, rel=0.03)


def test_affine_fit_gaussian_converges():
    s = VE()
    t = s.time_at(1.0)
    errors = []
    for n in (1_000, 10_000, 100_000):
        rng = np.random.default_rng(n)
        samples = IsotropicGaussian([0.0], 1.0).sample(n, rng)
        fit = fit_affine_denoiser(samples, [t], s, rng)
        errors.append(abs(fit.scale[0] - 0.5))
        assert abs(fit.offset[0, 0]) < 5.0 / math.sqrt(n)
    assert errors[-1] < 0.02
    for n, err in zip((1_000, 10_000, 100_000), errors):
        assert err < 4.0 / math.sqrt(n)


def test_affine_fit_degenerate_cases():
    s = VE()
    rng = np.random.default_rng(1)
    pm = fit_affine_denoiser(np.full((500, 1), 0.7), [0.5], s, rng)
    assert pm.scale[0] == pytest.approx(0.0, abs=1e-12)
    assert pm.offset[0, 0] == pytest.approx(0.7, abs=1e-12)
    clean = IsotropicGaussian([1.0], 2.0).sample(500, rng)
    ident = fit_affine_denoiser(clean, [0.0], s, rng)
    assert ident.scale[0] == pytest.approx(1.0, abs=1e-12)
    assert ident.offset[0, 0] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(np.linalg.LinAlgError):
        fit_affine_denoiser(np.zeros((200, 1)), [0.0], s, rng)
    with pytest.raises(ValueError):
        fit_affine_denoiser(np.zeros((10, 1)), [0.5], s, rng)


def test_affine_denoiser_interpolates_linearly_in_time():
    s = VE()
    rng = np.random.default_rng(2)
    samples = IsotropicGaussian([0.0], 1.0).sample(20_000, rng)
    fit = fit_affine_denoiser(samples, [0.2, 0.8], s, rng)
    x = np.array([1.3])
    assert fit(x, 0.5) == pytest.approx(0.5 * (fit(x, 0.2) + fit(x, 0.8)), rel=1e-14)
    assert fit(x, 0.2) == pytest.approx(fit.scale[0] * x + fit.offset[0], rel=1e-14)


def test_wasserstein():
    rng = np.random.default_rng(0)
    g = IsotropicGaussian([0.0], 1.0)
    assert wasserstein1(g.sample(20_000, rng), g) < 0.02
    assert wasserstein1(g.sample(20_000, rng) + 0.5, g) == pytest.approx(0.5, abs=0.02)
    assert wasserstein1(np.full((10, 1), 0.7), PointMass([0.7])) == 0.0
