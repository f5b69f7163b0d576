import pytest

from curvedqed.geometry import ConformalGeometry
from curvedqed.parametrix import ModelParameters


@pytest.fixture(scope="session")
def flat():
    return ConformalGeometry.flat()


@pytest.fixture(scope="session")
def curved():
    return ConformalGeometry.from_expression("0.1*x1^2")


@pytest.fixture(scope="session")
def unit_mass():
    return ModelParameters(m=1.0)
