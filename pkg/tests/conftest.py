import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cyclelab.harness import polar_test_field, van_der_pol  # noqa: E402
from cyclelab.constructions import sin_ring  # noqa: E402


@pytest.fixture(scope="session")
def vdp():
    return van_der_pol(1.0)


@pytest.fixture(scope="session")
def polar2():
    return polar_test_field(2)


@pytest.fixture(scope="session")
def polar3():
    return polar_test_field(3)


@pytest.fixture(scope="session")
def ring():
    return sin_ring(5)
