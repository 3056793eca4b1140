import os
from typing import Tuple

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()


class Config(BaseSettings):
    """Base configuration class"""

    model_config = SettingsConfigDict(env_prefix='SHOTNOISE_', extra='ignore', frozen=True)

    # Logging Configuration
    LOG_LEVEL: str = 'INFO'
    LOG_FORMAT: str = 'console'

    # Worker Configuration
    THREADS: int = 1
    DEFAULT_SEED: int = 0

    # Simulation Configuration
    OUTPUT_GRID_POINTS: int = 512
    MAX_EVENT_GRID: int = 100_000  # event times join the output grid up to this many events

    # Model Linting Configuration
    CHECK_TIMES: int = 64
    CHECK_STATES: int = 32
    CHECK_STATE_BOUND: float = 10.0
    CHECK_EPSILONS: Tuple[float, ...] = (1.0, 0.1, 0.01)
    CHECK_SEED: int = 20240101

    # Fluid Solver Configuration
    PICARD_TOL: float = 1e-9
    PICARD_MAX_ITER: int = 200
    CONTRACTION_TARGET: float = 0.5
    QUADRATURE_SUBNODES: int = 32
    QUADRATURE_MAX_STEP: float = 1.0 / 2048  # fraction of the horizon

    # Rate Optimizer Configuration
    RATE_QUADRATURE_MAX_STEP: float = 1.0 / 512
    AL_MAX_ROUNDS: int = 50
    AL_INITIAL_PENALTY: float = 10.0
    AL_PENALTY_GROWTH: float = 2.0
    AL_CONSTRAINT_TOL: float = 1e-8
    INNER_MAX_ITER: int = 500
    INNER_GTOL: float = 1e-10
    LEGENDRE_TOL: float = 1e-12
    LEGENDRE_MAX_ITER: int = 100

    # Monte Carlo Configuration
    MC_MIN_REPLICATIONS: int = 100
    THRESHOLD_SLACK: float = 1e-12

    @staticmethod
    def init_app(settings):
        """Initialize application with this config"""
        pass


class DevelopmentConfig(Config):
    """Development configuration"""

    # More verbose logging in development
    LOG_LEVEL: str = 'DEBUG'


class ProductionConfig(Config):
    """Production configuration"""

    # Production logging: one JSON object per line
    LOG_LEVEL: str = 'WARNING'
    LOG_FORMAT: str = 'json'


class TestingConfig(Config):
    """Testing configuration"""

    LOG_LEVEL: str = 'WARNING'


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig,
}


def get_config_name() -> str:
    """Active configuration name from the environment"""
    return os.getenv('SHOTNOISE_ENV', 'default')
