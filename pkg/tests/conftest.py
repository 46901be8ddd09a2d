import numpy as np
import pytest

from surrogate_debias.first_stage import Dataset
from surrogate_debias.simulation import ScenarioConfig, generate


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def cont_data():
    return generate(ScenarioConfig("continuous", 0.5, 500), seed=11)


@pytest.fixture(scope="session")
def bin_data():
    return generate(ScenarioConfig("binary", 0.5, 600), seed=12)


def random_gaussian_instance(seed, n=200, p=8, missing=0.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    z = x[:, 0] + 0.5 * rng.standard_normal(n)
    y = x @ np.linspace(1.0, -1.0, p) + 0.3 * z + rng.standard_normal(n)
    r = (rng.random(n) >= missing).astype(int)
    return Dataset(x, z, r, y)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LOG

    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)
