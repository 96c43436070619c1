import json
import pathlib

import numpy as np
import pytest

from delaymargin.core import LtiDelaySystem, example_system

GOLDEN = pathlib.Path(__file__).with_name("golden")


@pytest.fixture
def example():
    sys_, _ = example_system()
    return sys_


@pytest.fixture
def golden_k():
    return json.loads((GOLDEN / "example_k.json").read_text())


@pytest.fixture
def scalar_stable():
    # x' = -x(t - 1): constant-delay margin is pi/2
    return LtiDelaySystem([[0.0]], [[-1.0]], 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
