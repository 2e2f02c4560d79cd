import warnings

import numpy as np
import pytest
from hypothesis import settings

from pmprobe import EnvParams, ProbeParams
from pmprobe.experiments import ScenarioConfig

settings.register_profile("pmprobe", max_examples=60, deadline=None)
settings.load_profile("pmprobe")


@pytest.fixture
def probe():
    return ProbeParams()


@pytest.fixture
def strong_env():
    return EnvParams(3e22)


@pytest.fixture
def small_config():
    """Coarse grids so the sweep runners finish in well under a second."""
    return ScenarioConfig(t_points=30, gamma_points=7, contour_points=9, wigner_points=41)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture(autouse=True)
def _strict_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        yield


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_report(request):
    """Record one result line per acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        lines.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
