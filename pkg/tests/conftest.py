import numpy as np
import pytest

from gsbps import Dataset
from gsbps.simulation import Scenario, generate


def make_dataset(n=200, m=2, k=2, seed=0, partition=True, outcome=True):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, m))
    if k == 0:
        S = np.zeros((n, 0))
    elif partition:
        g = rng.integers(0, k, n)
        S = (g[:, None] == np.arange(k)).astype(float)
    else:
        S = (rng.uniform(size=(n, k)) < 0.5).astype(float)
    p = 1 / (1 + np.exp(-(0.3 * Z[:, 0] - 0.2 * Z[:, -1])))
    T = (rng.uniform(size=n) < p).astype(float)
    Y = 1.0 + Z.sum(axis=1) + 2.0 * T + rng.normal(size=n) if outcome else None
    return Dataset(Z, T, Y, S, tuple(f"Z{j + 1}" for j in range(m)), tuple(f"G{j + 1}" for j in range(k)))


@pytest.fixture
def small_data():
    return make_dataset()


@pytest.fixture(scope="session")
def ps1_draw():
    return generate(Scenario("PS1", "OM1", "ATE", seed=11), 0)


@pytest.fixture(scope="session")
def ps1_draw_att():
    return generate(Scenario("PS1", "OM1", "ATT", seed=11), 0)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
