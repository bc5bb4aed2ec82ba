import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fracpme import Grid, NonlinearitySpec, OperatorSpec, assemble

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def rfl64():
    return assemble(OperatorSpec("rfl", 0.25, Grid(-1.0, 1.0, 64)))


@pytest.fixture(scope="session")
def rfl128():
    return assemble(OperatorSpec("rfl", 0.25, Grid(-1.0, 1.0, 128)))


@pytest.fixture(scope="session")
def sfl64():
    return assemble(OperatorSpec("sfl", 0.25, Grid(-1.0, 1.0, 64)))


@pytest.fixture(scope="session")
def classical64():
    return assemble(OperatorSpec("classical", 1.0, Grid(-1.0, 1.0, 64)))


@pytest.fixture
def square():
    return NonlinearitySpec.power(2.0)


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def bump(x, center=0.0, width=1.0 / 3.0):
    z = (x - center) / width
    return np.where(np.abs(z) < 1, np.cos(0.5 * np.pi * z) ** 2, 0.0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
