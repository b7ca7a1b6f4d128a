import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from physinpaint.grid import BoundarySpec, make_grid
from physinpaint.kl import CovarianceSpec, kl_basis

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid16():
    return make_grid(16, 16, 2.0, 2.0)


@pytest.fixture(scope="session")
def bc():
    return BoundarySpec()


@pytest.fixture(scope="session")
def expcov():
    return CovarianceSpec(kernel="exponential")


@pytest.fixture(scope="session")
def basis16(grid16, expcov):
    return kl_basis(grid16, expcov, 64)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
