import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from shrinktm.basegauss import BaseFamily, covariance
from shrinktm.simulate import SimDesign, full_conditionals, generate, make_generator, simulate


def test_default_design_is_lr900():
    d = SimDesign()
    assert d.kind == "lr" and d.grid == (30, 30)
    assert d.locations().shape == (900, 2)
    assert d.locations().min() == 0.0 and d.locations().max() == 1.0
    assert d.family.kind == "exponential"
    assert d.family.variance == pytest.approx(1.0) and d.family.range == pytest.approx(0.3)


def test_lr_covariance_monte_carlo():
    gen = make_generator(SimDesign(grid=(2, 2)))
    y = generate(gen, 100_000, seed=3)
    target = covariance(SimDesign().family, gen.ordering.coords)
    assert np.max(np.abs(np.cov(y.T, bias=True) - target)) < 0.02


def test_full_conditionals_reconstruct_covariance():
    # with y = B y + D e, the covariance is (I - B)^{-1} D^2 (I - B)^{-T}
    gen = make_generator(SimDesign(grid=(4, 4)))
    a = np.linalg.inv(np.eye(16) - gen.coef)
    v = a @ np.diag(gen.sd ** 2) @ a.T
    np.testing.assert_allclose(v, covariance(SimDesign().family, gen.ordering.coords), atol=1e-12)


def test_nr_without_amplitude_equals_lr():
    gen = make_generator(SimDesign(grid=(5, 5)))
    a = generate(gen, 4, seed=9)
    b = generate(gen, 4, seed=9, amplitude=0.0, frequency=4.0)
    assert np.array_equal(a, b)
    lr = simulate(SimDesign(kind="lr", grid=(5, 5)), 3, seed=2).y
    nr = simulate(SimDesign(kind="nr", grid=(5, 5), amplitude=0.0), 3, seed=2).y
    assert np.array_equal(lr, nr)


def test_nr_first_component_matches_lr():
    lr = simulate(SimDesign(kind="lr", grid=(4, 4)), 50, seed=1).y
    nr = simulate(SimDesign(kind="nr", grid=(4, 4)), 50, seed=1).y
    assert np.array_equal(lr[:, 0], nr[:, 0])
    assert not np.array_equal(lr[:, 1:], nr[:, 1:])


def test_nr_mean_shift_formula():
    d = SimDesign(kind="nr", grid=(3, 3), amplitude=1.5, frequency=2.0)
    gen = make_generator(d)
    lr = generate(gen, 1, seed=4)[0]
    nr = generate(gen, 1, seed=4, amplitude=1.5, frequency=2.0)[0]
    # same noise, so y_i - B_i y differs by exactly the sine term
    eps_lr = (lr - gen.coef @ lr) / gen.sd
    nb = gen.ordering.neighbors
    shift = np.zeros(9)
    for i in range(1, 9):
        arg = gen.coef[i, nb[i, 0]] * nr[nb[i, 0]]
        if i >= 2:
            arg += gen.coef[i, nb[i, 1]] * nr[nb[i, 1]]
        shift[i] = 1.5 * np.sin(2.0 * arg)
    eps_nr = (nr - gen.coef @ nr - shift) / gen.sd
    np.testing.assert_allclose(eps_nr, eps_lr, atol=1e-12)


def test_replicates_independent_of_batch_size():
    gen = make_generator(SimDesign(grid=(3, 3)))
    assert np.array_equal(generate(gen, 5, seed=7)[:2], generate(gen, 2, seed=7))


def test_column_means_shrink():
    gen = make_generator(SimDesign(grid=(3, 3)))
    y = generate(gen, 20_000, seed=5)
    assert np.max(np.abs(y.mean(axis=0))) < 4 / np.sqrt(20_000) * 1.5


def test_lr_is_gaussian():
    gen = make_generator(SimDesign(grid=(3, 3)))
    y = generate(gen, 5_000, seed=6)
    chol = np.linalg.cholesky(covariance(SimDesign().family, gen.ordering.coords))
    w = np.linalg.solve(chol, y.T).ravel()
    assert stats.kstest(w, "norm").pvalue > 1e-3


@given(st.integers(0, 2 ** 32 - 1))
def test_same_seed_same_draws(seed):
    gen = make_generator(SimDesign(kind="nr", grid=(3, 3)))
    assert np.array_equal(generate(gen, 2, seed, 2.0), generate(gen, 2, seed, 2.0))


def test_simulated_data_orders():
    sim = simulate(SimDesign(grid=(3, 4)), 2, seed=0)
    assert sim.y.shape == (2, 12)
    np.testing.assert_array_equal(sim.ordering.to_ordered(sim.y_original), sim.y)
    assert sim.ids == [str(i) for i in range(12)]


def test_bad_designs():
    with pytest.raises(ValueError):
        SimDesign(kind="xx")
    with pytest.raises(ValueError):
        SimDesign(grid=(1, 1))
    with pytest.raises(ValueError):
        generate(make_generator(SimDesign(grid=(2, 2))), -1)


def test_gaussian_base_family():
    fam = BaseFamily.create("matern", variance=2.0, range=0.2, smoothness=1.5)
    gen = full_conditionals(fam, make_generator(SimDesign(grid=(3, 3))).ordering)
    a = np.linalg.inv(np.eye(9) - gen.coef)
    np.testing.assert_allclose(a @ np.diag(gen.sd ** 2) @ a.T, covariance(fam, gen.ordering.coords), atol=1e-12)
