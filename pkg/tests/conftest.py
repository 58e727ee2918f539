import numpy as np
import pytest
from hypothesis import settings

from rmstpo.survival import SurvivalSample

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_sample(rng, n0, n1, censor_rate=0.05, rate=0.15, ties=False, n_cov=0):
    n = n0 + n1
    t = rng.exponential(1 / rate, n)
    c = rng.exponential(1 / censor_rate, n)
    time = np.minimum(t, c)
    if ties:
        time = np.round(time)
    status = (t <= c).astype(int)
    cov = rng.normal(size=(n, n_cov)) if n_cov else None
    return SurvivalSample(time, status, np.repeat([0, 1], [n0, n1]), cov)


def moderate_tail_sample(n, seed):
    """One group: Exponential(0.1) events, Uniform(0, 30) censoring; about a quarter at risk at t=10."""
    r = np.random.default_rng([n, seed])
    t, c = r.exponential(10.0, n), r.uniform(0.0, 30.0, n)
    return SurvivalSample(np.minimum(t, c), (t <= c).astype(int), np.zeros(n, int))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def ovarian_sample():
    from rmstpo.cli import load_ovarian
    return load_ovarian()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
