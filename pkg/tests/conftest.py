import numpy as np
import pytest

from vml_lab import GaussianMixture, LinearOperator


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bimodal_1d():
    return GaussianMixture.isotropic([0.3, 0.7], [[-2.5], [2.5]], [1.0, 0.5])


@pytest.fixture
def gmm_2d():
    covs = np.array([[[1.0, 0.4], [0.4, 0.8]], [[0.5, -0.1], [-0.1, 0.3]], [[2.0, 0.0], [0.0, 0.2]]])
    return GaussianMixture([0.2, 0.5, 0.3], [[0.0, 1.0], [2.0, -1.0], [-1.5, 0.5]], covs)


@pytest.fixture
def dense_op():
    return LinearOperator.from_matrix([[1.0, 0.5], [-0.3, 2.0], [0.7, 0.1]])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
