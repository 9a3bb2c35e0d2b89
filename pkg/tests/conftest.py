import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shrinktm.basegauss import BaseFamily
from shrinktm.geometry import grid_locations, maximin_order
from shrinktm.mapkernel import HyperParams
from shrinktm.posterior import fit_components
from shrinktm.simulate import SimDesign, generate, make_generator

settings.register_profile("ci", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def grid10():
    return maximin_order(grid_locations(10))


@pytest.fixture(scope="session")
def grid5():
    return maximin_order(grid_locations(5))


@pytest.fixture(scope="session")
def lr10():
    """Generator for the exponential(1, 0.3) design on a 10x10 grid."""
    return make_generator(SimDesign(kind="lr", grid=(10, 10)))


def random_hp(rng, mode="shrinktm", kind="matern", **kw):
    """Moderate random hyperparameters (away from numerically extreme corners)."""
    base = None
    if mode == "shrinktm":
        base = BaseFamily.create(kind, variance=rng.uniform(0.5, 2.0), range=rng.uniform(0.1, 0.5),
                                 smoothness=rng.uniform(0.6, 2.0))
    vals = dict(log_cd=rng.uniform(-1, 0.5), theta_sigma1=rng.uniform(-1, 0.5),
                theta_sigma2=rng.uniform(-0.5, 1.0), theta_q=rng.uniform(-1.5, 0.0),
                theta_gamma=rng.uniform(-0.5, 0.5), theta_sigma0=rng.uniform(-1.5, 0.0))
    if mode == "simpletm":
        vals.update(theta_d1=rng.uniform(-1, 0), theta_d2=rng.uniform(0, 1))
    vals.update(kw)
    return HyperParams(base=base, mode=mode, **vals)


@pytest.fixture(scope="session")
def fitted25(grid5):
    """A posterior map on a 5x5 grid trained on 3 LR replicates."""
    gen = make_generator(SimDesign(kind="lr", grid=(5, 5)), grid5)
    y = generate(gen, 3, seed=11)
    hp = random_hp(np.random.default_rng(3))
    return fit_components(y, hp, grid5)


# acceptance verdicts, echoed after the run so they show up without -s
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
