import pytest

from helpers import load_frozen


@pytest.fixture(scope="session")
def frozen():
    return load_frozen()
