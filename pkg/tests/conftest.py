import numpy as np
import pytest

from dynport.synthetic import synthetic_prices


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fixture_prices():
    """The default 52-asset, 8-year synthetic panel."""
    return synthetic_prices(seed=0)


@pytest.fixture(scope="session")
def fixture_csv(tmp_path_factory, fixture_prices):
    from dynport.market_data import write_prices

    path = tmp_path_factory.mktemp("data") / "prices.csv"
    write_prices(fixture_prices, path)
    return path


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
