import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ga2lab.network import NetworkSpec, build_network  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def net22():
    return build_network(NetworkSpec(2, 2))


@pytest.fixture(scope="session")
def net12():
    return build_network(NetworkSpec(1, 2))


@pytest.fixture(scope="session")
def net44():
    return build_network(NetworkSpec(4, 4, approach_length_ew_m=800.0, approach_length_ns_m=600.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
