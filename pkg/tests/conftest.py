import numpy as np
import pytest

from cachecran.model import SystemConfig
from cachecran.scenario import generate_scenario, noise_power

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for the end-of-run acceptance summary."""

    def record(name, ok, detail=""):
        _VERDICTS.append(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)


def tiny_config(fronthaul=40e6, cache_size=1):
    return SystemConfig(2, 2, 4, 3, 20e6, noise_power(20e6, 4), fronthaul, 20e6, cache_size)


def desk_config(fronthaul=40e6, cache_size=2):
    return SystemConfig(3, 4, 16, 10, 20e6, noise_power(20e6, 16), fronthaul, 20e6, cache_size)


@pytest.fixture
def tiny():
    cfg = tiny_config()
    return generate_scenario(cfg, 11, "most_popular")


@pytest.fixture
def desk():
    return generate_scenario(desk_config(), 3, "probabilistic")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
