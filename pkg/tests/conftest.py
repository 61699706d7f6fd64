import sys

import numpy as np
import pytest

from asyncfl.model import SyntheticTask
from asyncfl.sim.population import Population, PopulationSpec


@pytest.fixture(scope="session")
def small_population():
    return Population(PopulationSpec(population_size=5000))


@pytest.fixture(scope="session")
def small_task():
    return SyntheticTask(input_dim=20, seed=3, bank_size=512)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for r in results:
            terminalreporter.write_line(r.line())
