import numpy as np
import pytest

from rcmlab.environment import BoxSpec, ConductanceLaw, sample_environment


@pytest.fixture
def poly02():
    return ConductanceLaw.polynomial(0.2)


@pytest.fixture
def env_factory():
    def make(n=8, gamma=0.2, seed=0, d=2, pad=5):
        return sample_environment(BoxSpec(d, n, pad), ConductanceLaw.polynomial(gamma), seed)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
