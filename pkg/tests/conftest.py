import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparse_ilc.lti import lift
from sparse_ilc.plant import build_surrogate

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def surrogate():
    return build_surrogate()


@pytest.fixture(scope="session")
def J64(surrogate):
    return lift(surrogate.J, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(capsys):
    """``acceptance(k, ok, detail)`` prints one PASS/FAIL line and asserts ``ok``."""

    def report(k, ok, detail):
        line = "ACCEPTANCE %2d %s  %s" % (k, "PASS" if ok else "FAIL", detail)
        ACCEPTANCE_LINES.append((k, line))
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
