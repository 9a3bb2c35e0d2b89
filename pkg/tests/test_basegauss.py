import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special, stats

from shrinktm.basegauss import (BaseFamily, VecchiaBlocks, covariance, gaussian_loglik, matcov_mle,
                                matern_correlation, matern_correlation_grads, vecchia_coefficients,
                                vecchia_loglik)
from shrinktm.geometry import grid_locations, maximin_order
from shrinktm.simulate import SimDesign, generate, make_generator


def matern_textbook(d, rng, nu):
    # 2^{1-nu}/Gamma(nu) x^nu K_nu(x), x = d / range
    x = np.asarray(d, float) / rng
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    out[pos] = 2 ** (1 - nu) / special.gamma(nu) * xp ** nu * special.kv(nu, xp)
    return out


def test_exponential_values():
    fam = BaseFamily.create("exponential", variance=1.0, range=0.3)
    c = covariance(fam, np.array([[0.0, 0.0]]), np.array([[0.0, 0.0], [0.3, 0.0]]))
    assert c[0, 0] == 1.0
    assert c[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-14)
    assert c[0, 1] == pytest.approx(0.3679, abs=1e-4)


def test_matern_half_is_exponential():
    d = np.linspace(0, 3, 301)
    expo = BaseFamily.create("exponential", variance=2.0, range=0.7)
    mat = BaseFamily.create("matern", variance=2.0, range=0.7, smoothness=0.5)
    pts = np.column_stack([d, np.zeros_like(d)])
    np.testing.assert_allclose(covariance(mat, pts[:1], pts), covariance(expo, pts[:1], pts), rtol=1e-14)


@pytest.mark.parametrize("nu", [0.5, 0.8, 1.0, 1.5, 2.2, 2.5, 3.7])
def test_matern_against_textbook_bessel_form(nu):
    d = np.concatenate([[0.0], np.geomspace(1e-4, 8, 60)])
    np.testing.assert_allclose(matern_correlation(d / 0.4, nu), matern_textbook(d, 0.4, nu),
                               rtol=1e-9, atol=1e-14)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5, 0.9, 1.7])
def test_correlation_derivatives(nu):
    x = np.geomspace(1e-3, 5, 40)
    _, dr, dnu = matern_correlation_grads(x, nu)
    h = 1e-4
    # d/dlog(range) at fixed distance: x -> x e^{-h}
    fd_r = (matern_correlation(x * np.exp(-h), nu) - matern_correlation(x * np.exp(h), nu)) / (2 * h)
    np.testing.assert_allclose(dr, fd_r, rtol=1e-6, atol=1e-8)
    fd_nu = (matern_textbook(x, 1.0, nu * np.exp(1e-4)) - matern_textbook(x, 1.0, nu * np.exp(-1e-4))) / 2e-4
    np.testing.assert_allclose(dnu, fd_nu, rtol=1e-4, atol=1e-8)


def test_vecchia_two_points():
    # correlation 0.5 at distance range*ln 2
    fam = BaseFamily.create("exponential", variance=1.0, range=1.0)
    pts = np.array([[0.0, 0.0], [np.log(2.0), 0.0]])
    o = maximin_order(pts, first=0)
    c = vecchia_coefficients(fam, o, m=1)
    assert c.xi[1, 0] == pytest.approx(0.5, rel=1e-14)
    assert c.tau2[1] == pytest.approx(0.75, rel=1e-14)


def test_first_component_has_full_variance(grid10):
    fam = BaseFamily.create("matern", variance=1.7, range=0.2, smoothness=1.1)
    c = vecchia_coefficients(fam, grid10, m=10)
    assert c.tau2[0] == pytest.approx(1.7)
    assert np.all(c.xi[0] == 0)


def test_vecchia_coefficients_match_dense_conditioning(grid10):
    fam = BaseFamily.create("matern", variance=1.3, range=0.25, smoothness=1.5)
    m = 7
    c = vecchia_coefficients(fam, grid10, m=m)
    full = covariance(fam, grid10.coords)
    for i in (1, 3, 8, 40, 99):
        g = grid10.neighbors[i, :min(i, m)]
        xi = np.linalg.solve(full[np.ix_(g, g)], full[g, i])
        np.testing.assert_allclose(c.xi[i, :g.size], xi, rtol=1e-9, atol=1e-12)
        assert c.tau2[i] == pytest.approx(full[i, i] - full[i, g] @ xi, rel=1e-9)


def test_conditional_mean_by_monte_carlo(grid5):
    fam = BaseFamily.create("exponential", variance=1.0, range=0.3)
    c = vecchia_coefficients(fam, grid5, m=3)
    i = 12
    g = grid5.neighbors[i, :3]
    full = covariance(fam, grid5.coords)
    idx = np.concatenate([g, [i]])
    rng = np.random.default_rng(0)
    draws = rng.multivariate_normal(np.zeros(4), full[np.ix_(idx, idx)], size=200_000)
    # least squares of y_i on y_g estimates E[y_i | y_g] weights
    beta, *_ = np.linalg.lstsq(draws[:, :3], draws[:, 3], rcond=None)
    np.testing.assert_allclose(beta, c.xi[i, :3], atol=0.01)


def test_full_conditioning_equals_dense_density():
    x = np.linspace(0, 1, 20)[:, None]
    o = maximin_order(x)
    fam = BaseFamily.create("matern", variance=1.2, range=0.3, smoothness=1.5)
    c = vecchia_coefficients(fam, o, m=19)
    rng = np.random.default_rng(5)
    y = rng.standard_normal((5, 20))
    vl = vecchia_loglik(c, o, y)
    exact = stats.multivariate_normal(np.zeros(20), covariance(fam, o.coords)).logpdf(y)
    np.testing.assert_allclose(vl, exact, rtol=1e-8)


def test_vecchia_gradients_match_finite_differences(grid5):
    fam = BaseFamily.create("matern", variance=1.4, range=0.3, smoothness=1.2)
    m = 6
    blocks = VecchiaBlocks(grid5, m)
    _, dxi, dtau2 = vecchia_coefficients(fam, grid5, m, blocks, grad=True)
    p = fam.params()
    h = 1e-6
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = h
        up = vecchia_coefficients(fam.with_params(p + e), grid5, m, blocks)
        dn = vecchia_coefficients(fam.with_params(p - e), grid5, m, blocks)
        np.testing.assert_allclose(dxi[j], (up.xi - dn.xi) / (2 * h), atol=1e-6)
        np.testing.assert_allclose(dtau2[j], (up.tau2 - dn.tau2) / (2 * h), rtol=1e-5, atol=1e-8)


def test_gaussian_loglik_and_gradient(grid5):
    fam = BaseFamily.create("matern", variance=0.9, range=0.35, smoothness=0.8)
    rng = np.random.default_rng(1)
    y = rng.standard_normal((3, grid5.size))
    ll, g = gaussian_loglik(fam, grid5.coords, y, grad=True)
    ref = stats.multivariate_normal(np.zeros(grid5.size), covariance(fam, grid5.coords)).logpdf(y).sum()
    assert ll == pytest.approx(ref, rel=1e-12)
    p = fam.params()
    for j in range(p.size):
        e = np.zeros_like(p)
        e[j] = 1e-5
        fd = (gaussian_loglik(fam.with_params(p + e), grid5.coords, y)
              - gaussian_loglik(fam.with_params(p - e), grid5.coords, y)) / 2e-5
        assert g[j] == pytest.approx(fd, rel=1e-5)


@given(st.floats(0.05, 0.6), st.floats(0.4, 2.5), st.integers(1, 9))
def test_tau2_weakly_decreasing_in_m(rng_, nu, m):
    o = maximin_order(grid_locations(5), m_max=10)
    fam = BaseFamily.create("matern", variance=1.0, range=rng_, smoothness=nu)
    a = vecchia_coefficients(fam, o, m=m).tau2
    b = vecchia_coefficients(fam, o, m=m + 1).tau2
    assert np.all(b <= a * (1 + 1e-8) + 1e-12)


def test_matcov_recovers_range():
    gen = make_generator(SimDesign(kind="lr", grid=(10, 10)))
    y = generate(gen, 50, seed=3)
    fit = matcov_mle(y, gen.ordering.coords, kind="exponential")
    assert abs(fit.family.range - 0.3) <= 0.3 * 0.3
    truth = BaseFamily.create("exponential", variance=1.0, range=0.3)
    assert gaussian_loglik(truth, gen.ordering.coords, y) <= fit.loglik + 1e-8
    assert fit.family.param_names == ("log_variance", "log_range")


def test_matcov_matern_three_parameters(lr10):
    y = generate(lr10, 2, seed=4)
    fit = matcov_mle(y, lr10.ordering.coords)
    assert len(fit.family.params()) == 3
    truth = BaseFamily.create("matern", variance=1.0, range=0.3, smoothness=0.5)
    assert gaussian_loglik(truth, lr10.ordering.coords, y) <= fit.loglik + 1e-8


def test_matcov_zero_field():
    with pytest.raises(ValueError, match="degenerate data"):
        matcov_mle(np.zeros((1, 25)), grid_locations(5))
