import math

import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, strategies as st
from scipy import stats

from shrinktm.basegauss import BaseCoefficients
from shrinktm.mapkernel import (HyperParams, correlation, kernel_matrix, prior_moments, sparsity_level)


def _coeffs(ordering, tau2=None):
    n = ordering.size
    tau2 = np.linspace(1.0, 0.2, n) if tau2 is None else tau2
    return BaseCoefficients(xi=np.zeros((n, 30)), tau2=tau2, m=30)


def test_sparsity_level_examples():
    assert sparsity_level(0.0) == 4
    assert sparsity_level(-1.0) == 12
    assert sparsity_level(-1.0) == math.floor(-math.log(0.01) / math.exp(-1.0))
    assert sparsity_level(50.0) == 0
    assert sparsity_level(1e6) == 0
    assert sparsity_level(-50.0) == 30


@given(st.floats(-6, 6), st.floats(0, 3))
def test_sparsity_level_monotone_in_theta_q(t, dt):
    assert sparsity_level(t + dt) <= sparsity_level(t)


@given(st.floats(-6, 6))
def test_sparsity_level_is_the_threshold(t):
    k = sparsity_level(t, m_max=10_000)
    rate = math.exp(t)
    assert k == 0 or math.exp(-rate * k) >= 0.01
    assert math.exp(-rate * (k + 1)) < 0.01


def test_default_hyperparameters():
    hp = HyperParams.default()
    assert hp.base.log_range == 2.0
    assert hp.base.log_variance == 0.0
    assert hp.base.smoothness == pytest.approx(1.5)
    assert (hp.log_cd, hp.theta_sigma1, hp.theta_sigma2, hp.theta_q) == (0.0, 0.0, 0.0, -1.0)
    assert hp.names()[:3] == ("base.log_variance", "base.log_range", "base.log_smoothness")
    assert len(HyperParams.default("simpletm").names()) == 8


def test_vector_roundtrip():
    hp = HyperParams.default()
    v = hp.vector() + np.arange(hp.vector().size) * 0.1
    assert np.array_equal(hp.with_vector(v).vector(), v)
    assert HyperParams.from_dict(hp.with_vector(v).to_dict()) == hp.with_vector(v)


def test_inverse_gamma_moments(grid5):
    base = _coeffs(grid5)
    mom = prior_moments(HyperParams(log_cd=0.0), base, grid5)
    np.testing.assert_allclose(mom.alpha, 3.0)
    np.testing.assert_allclose(mom.beta, 2.0 * base.tau2)
    mom = prior_moments(HyperParams(log_cd=math.log(0.1)), base, grid5)
    np.testing.assert_allclose(mom.alpha, 102.0)
    np.testing.assert_allclose(mom.beta, 101.0 * base.tau2)
    ig = stats.invgamma(mom.alpha[3], scale=mom.beta[3])
    assert ig.std() / ig.mean() == pytest.approx(0.1, rel=1e-10)
    assert ig.mean() == pytest.approx(base.tau2[3], rel=1e-12)


@given(st.floats(-3, 1))
def test_alpha_exceeds_two(log_cd):
    assert HyperParams(log_cd=log_cd).alpha > 2.0


def test_sigma_power_law(grid5):
    mom = prior_moments(HyperParams(theta_sigma1=0.0, theta_sigma2=2.0), _coeffs(grid5), grid5)
    np.testing.assert_allclose(mom.sigma2[1:], grid5.scales[1:] ** 2)
    assert mom.sigma2[0] == 0.0
    assert np.all(np.diff(mom.sigma2[1:]) <= 0)


@given(st.floats(-3, 1))
def test_relevance_weights_structure(theta_q):
    from shrinktm.geometry import grid_locations, maximin_order
    o = maximin_order(grid_locations(6))
    mom = prior_moments(HyperParams(theta_q=theta_q), _coeffs(o), o)
    q = mom.q()
    assert q.shape[1] == mom.m_prime
    assert np.all(np.diff(q, axis=1) <= 0)
    nnz = np.count_nonzero(q, axis=1)
    np.testing.assert_array_equal(nnz, np.minimum(np.arange(o.size), mom.m_prime))


def _moments(grid5, **kw):
    hp = HyperParams(**kw)
    return hp, prior_moments(hp, _coeffs(grid5), grid5)


def test_kernel_diagonal(grid5):
    hp, mom = _moments(grid5, theta_q=-0.5, theta_sigma0=-0.3)
    i = 10
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, mom.m_prime))
    k = kernel_matrix(hp, mom, i, x)
    quad = np.einsum("jk,k,jk->j", x, mom.weights[i], x)
    np.testing.assert_allclose(np.diag(k) * mom.tau2[i], hp.sigma0_sq * quad + mom.sigma2[i])


def test_kernel_vanishes_without_variance(grid5):
    hp, mom = _moments(grid5, theta_sigma0=-np.inf, theta_sigma1=-np.inf)
    x = np.random.default_rng(1).standard_normal((5, min(7, mom.m_prime)))
    assert np.all(kernel_matrix(hp, mom, 7, x) == 0.0)


@given(st.integers(0, 2 ** 31), st.sampled_from(["se", "matern32"]))
def test_kernel_positive_semidefinite(seed, rho):
    from shrinktm.geometry import grid_locations, maximin_order
    o = maximin_order(grid_locations(5))
    rng = np.random.default_rng(seed)
    hp = HyperParams(theta_q=rng.uniform(-2, 0), theta_gamma=rng.uniform(-1, 1),
                     theta_sigma0=rng.uniform(-2, 1), theta_sigma1=rng.uniform(-2, 1), rho=rho)
    mom = prior_moments(hp, _coeffs(o), o)
    i = int(rng.integers(1, o.size))
    x = rng.standard_normal((5, min(i, mom.m_prime))) * rng.uniform(0.1, 3)
    k = kernel_matrix(hp, mom, i, x)
    assert np.linalg.eigvalsh((k + k.T) / 2).min() >= -1e-10


def test_kernel_scales_inversely_with_tau2(grid5):
    hp = HyperParams(theta_q=-0.5)
    a = prior_moments(hp, _coeffs(grid5), grid5)
    b = prior_moments(hp, _coeffs(grid5, 2 * np.linspace(1.0, 0.2, grid5.size)), grid5)
    x = np.random.default_rng(2).standard_normal((3, a.m_prime))
    np.testing.assert_allclose(kernel_matrix(hp, b, 9, x), kernel_matrix(hp, a, 9, x) / 2, rtol=1e-14)


def test_correlation_at_zero():
    for kind in ("se", "matern32"):
        assert correlation(np.array([0.0]), 0.7, kind)[0] == 1.0


def test_rejects_bad_settings():
    with pytest.raises(ValueError):
        HyperParams(mode="other")
    with pytest.raises(ValueError):
        HyperParams(base=None, mode="shrinktm")
    with pytest.raises(ValueError):
        replace(HyperParams(), m=31)
    with pytest.raises(ValueError):
        sparsity_level(0.0, eps=1.5)
