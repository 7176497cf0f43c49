import time

import numpy as np
import pytest

from robust_vrft.harness import PLANTS, ExperimentConfig, monte_carlo
from robust_vrft.lti import TransferFunction


@pytest.fixture
def G1():
    return TransferFunction(*PLANTS["G1"])


@pytest.fixture
def G2():
    return TransferFunction(*PLANTS["G2"])


def first_order(a, b=1.0):
    """``b / (z - a)``."""
    return TransferFunction([b], [1.0, -a])


def random_stable(rng, max_radius=0.93, order=2):
    """Random stable real system with poles of radius <= ``max_radius``."""
    poles = []
    while len(poles) < order:
        if order - len(poles) >= 2 and rng.random() < 0.5:
            r, th = rng.uniform(0.1, max_radius), rng.uniform(0.05, np.pi - 0.05)
            poles += [r * np.exp(1j * th), r * np.exp(-1j * th)]
        else:
            poles.append(rng.uniform(-max_radius, max_radius))
    den = np.real(np.poly(poles))
    num = rng.normal(size=order)
    return TransferFunction(num, den)


# Shared Monte Carlo studies. Each takes minutes on one core, so they are
# computed once per session and reused by the harness and acceptance tests.

class Timed:
    def __init__(self, config, fn):
        t0 = time.perf_counter()
        self.config = config
        self.table = fn(config)
        self.seconds = time.perf_counter() - t0


@pytest.fixture(scope="session")
def mc_example1():
    cfg = ExperimentConfig.preset("example1", algorithms=["igwo", "gwo"], monte_carlo_runs=10)
    return Timed(cfg, monte_carlo)


@pytest.fixture(scope="session")
def mc_example2():
    cfg = ExperimentConfig.preset("example2", algorithms=["pso"], monte_carlo_runs=10)
    return Timed(cfg, monte_carlo)


@pytest.fixture(scope="session")
def mc_example2_igwo():
    cfg = ExperimentConfig.preset("example2", algorithms=["igwo"], monte_carlo_runs=1)
    return Timed(cfg, monte_carlo)
