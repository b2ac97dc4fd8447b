import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hostcap import fixtures  # noqa: E402


@pytest.fixture
def net2():
    return fixtures.two_bus()


@pytest.fixture
def net3():
    return fixtures.three_bus_chain()


@pytest.fixture
def net4():
    return fixtures.four_bus()
