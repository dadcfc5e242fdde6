import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gelfand.domain import DomainSpec, build_grid  # noqa: E402
from gelfand.steady import continue_branch  # noqa: E402


@pytest.fixture(scope="session")
def interval_branch():
    return continue_branch(build_grid(DomainSpec.interval(1.0), 801))


@pytest.fixture(scope="session")
def disk_branch():
    return continue_branch(build_grid(DomainSpec.ball(2, 1.0), 801))


@pytest.fixture(scope="session")
def ball3_branch():
    return continue_branch(build_grid(DomainSpec.ball(3, 1.0), 801))


@pytest.fixture(scope="session")
def ball10_branch():
    return continue_branch(build_grid(DomainSpec.ball(10, 1.0), 801), lambda_max_cap=15.99)
