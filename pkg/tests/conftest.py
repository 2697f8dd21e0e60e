import numpy as np
import pandas as pd
import pytest

from exposure_erf.data_io import HealthSeries, MonitorPanel, Site

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_monitor():
    dates = pd.date_range("2001-03-01", periods=40, freq="D")
    gen = np.random.default_rng(7)
    amb = 30 + 10 * np.sin(np.arange(40) / 6)[:, None] + gen.normal(0, 2, (40, 3))
    sites = [Site("A1", "north"), Site("A2", "north"), Site("B1", "south")]
    return MonitorPanel(sites=sites, dates=dates, ambient=np.maximum(amb, 0))


@pytest.fixture
def small_health(small_monitor):
    n = len(small_monitor.dates)
    gen = np.random.default_rng(8)
    return HealthSeries(
        dates=small_monitor.dates,
        counts=gen.poisson(20, n),
        temp_mean=10 + 5 * np.cos(np.arange(n) / 10),
        temp_max=15 + 5 * np.cos(np.arange(n) / 10),
    )


@pytest.fixture(scope="session")
def tiny_scenario():
    from exposure_erf.synth import SynthScenario

    return SynthScenario(n_days=120, districts=2, replicates=25, time_df=3, temp_df=1, seed=5)


@pytest.fixture(scope="session")
def tiny_data(tiny_scenario):
    from exposure_erf.synth import generate

    return generate(tiny_scenario)


@pytest.fixture(scope="session")
def tiny_config():
    from exposure_erf.config import RunConfig

    return RunConfig(time_df=3, temp_df=1, burn_in=1000, iterations=3000, thin=3, seed=2)
