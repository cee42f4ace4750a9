import numpy as np
import pytest

from kobdual.core_random import RandomStream
from kobdual.factory import EtaSearchConfig, TargetFunction, build_table, check_poly_bound
from kobdual.registry import get_function


def small_table(f: TargetFunction, levels: int = 8, mode: str = "certified"):
    return build_table(f, check_poly_bound(f), EtaSearchConfig(levels=levels, mode=mode))


@pytest.fixture(scope="session")
def half_table():
    return small_table(get_function("constant-half"))


@pytest.fixture(scope="session")
def linear_table():
    return small_table(get_function("linear13"))


@pytest.fixture(scope="session")
def classical_table():
    return small_table(get_function("classical"), levels=12, mode="heuristic")


@pytest.fixture(scope="session")
def third_table():
    f = TargetFunction(lambda p: np.full_like(p, 1.0 / 3.0), 0.0, "third")
    return small_table(f)


@pytest.fixture(scope="session")
def table_cache(tmp_path_factory):
    """Cache directory shared by registry-depth tables and the CLI runs."""
    return tmp_path_factory.mktemp("tables")


@pytest.fixture(scope="session")
def registry_table(table_cache):
    from kobdual.tables import table_for

    return lambda name: table_for(name, cache_dir=table_cache)


@pytest.fixture
def rng():
    return RandomStream(12345)


def within(stats, target, k=4.0, slack=0.0):
    return abs(stats.mean - target) <= k * stats.std_error + slack


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
