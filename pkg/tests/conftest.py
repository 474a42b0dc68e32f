import pytest

from towsim import BrakeParams, ControllerGains, PropulsionMap, TractorParams


@pytest.fixture
def params():
    return TractorParams()


@pytest.fixture
def gains():
    return ControllerGains()


@pytest.fixture
def pmap():
    return PropulsionMap()


@pytest.fixture
def brake():
    return BrakeParams()
