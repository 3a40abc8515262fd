import sys

import numpy as np
import pytest

from gpo.benchmarks import gen_tiger_mining
from gpo.support import enumerate_valid_supports, value_iteration


@pytest.fixture(scope="session")
def tiger():
    return gen_tiger_mining()


@pytest.fixture(scope="session")
def tiger_game(tiger):
    return enumerate_valid_supports(tiger)


@pytest.fixture(scope="session")
def tiger_table(tiger_game):
    return value_iteration(tiger_game)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def ix(model, *names):
    return [model.state_index(n) for n in names]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
