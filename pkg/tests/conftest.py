import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from routecast.network import generate_grid_network  # noqa: E402


@pytest.fixture(scope="session")
def grid3():
    return generate_grid_network(3, spacing=100.0, seed=7)


@pytest.fixture(scope="session")
def grid5():
    return generate_grid_network(5, spacing=100.0, seed=11)
