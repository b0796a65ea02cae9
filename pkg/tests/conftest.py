import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cssmpc import terminal, vehicle

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def vehicle_scenario():
    return vehicle.build_scenario()


@pytest.fixture(scope="session")
def vehicle_frozen(vehicle_scenario):
    """Frozen-vertex robust ingredients for the default vehicle scenario."""
    return terminal.synthesize(vehicle_scenario.hull, vehicle_scenario.chance, quantifier=terminal.FROZEN)


@pytest.fixture(scope="session")
def vehicle_nominal(vehicle_scenario):
    return terminal.synthesize(vehicle_scenario.nominal_hull, vehicle_scenario.chance)
