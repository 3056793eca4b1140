import json

import pytest

from config import TestingConfig
from shotnoise import setup_logging
from shotnoise.models.catalogue import compound_poisson_model, unit_poisson_model
from shotnoise.services.fluid_service import FluidService
from shotnoise.services.model_service import ModelService
from shotnoise.services.monte_carlo_service import MonteCarloService
from shotnoise.services.rate_service import RateService
from shotnoise.services.simulation_service import SimulationService


@pytest.fixture(scope='session')
def settings():
    """Testing configuration with logging set up once"""
    settings = TestingConfig()
    setup_logging(settings)
    return settings


@pytest.fixture
def unit_model():
    return unit_poisson_model()


@pytest.fixture
def growth_model():
    """d = 1, h(z, x) = 0.7 (1 + x), instantaneous shots"""
    return compound_poisson_model([[0.7]], [1.0], shot_value='linear_growth')


@pytest.fixture
def two_atom_model():
    """h in {1, 3} with weights {1, 0.5}"""
    return compound_poisson_model([[1.0], [3.0]], [1.0, 0.5])


@pytest.fixture
def model_service(settings):
    return ModelService(settings)


@pytest.fixture
def simulation_service(settings):
    return SimulationService(settings)


@pytest.fixture
def fluid_service(settings):
    return FluidService(settings)


@pytest.fixture
def rate_service(settings):
    return RateService(settings)


@pytest.fixture
def monte_carlo_service(settings):
    return MonteCarloService(settings)


@pytest.fixture
def write_json(tmp_path):
    """Write a JSON document under tmp_path and return its path"""
    def _write(name, data):
        path = tmp_path / name
        path.write_text(json.dumps(data) if not isinstance(data, str) else data)
        return path
    return _write
