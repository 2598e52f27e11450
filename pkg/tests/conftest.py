import numpy as np
import pytest
from hypothesis import settings

from smcstab.models import DiscreteHmm

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def two_state():
    return DiscreteHmm(q=[[0.9, 0.1], [0.2, 0.8]], g=[[0.8, 0.2], [0.3, 0.7]], chi=[2 / 3, 1 / 3])


def random_discrete(rng: np.random.Generator, m: int, k: int, n: int):
    q = rng.dirichlet(np.ones(m), size=m)
    g = rng.dirichlet(np.ones(k), size=m)
    chi = rng.dirichlet(np.ones(m))
    y = rng.integers(0, k, size=n)
    return DiscreteHmm(q=q, g=g, chi=chi), y


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
