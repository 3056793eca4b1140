import logging
import sys
from functools import lru_cache

import structlog

from config import Config, config, get_config_name

__version__ = '1.0.0'


def create_app(config_name: str = 'default') -> Config:
    """Application factory pattern"""

    # Load configuration
    settings = config[config_name]()
    config[config_name].init_app(settings)

    # Set up logging
    setup_logging(settings)

    logger = structlog.get_logger(__name__)
    logger.debug("shotnoise configured", config_name=config_name, version=__version__)
    return settings


def setup_logging(settings: Config) -> None:
    """Configure application logging"""

    log_level = getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO)

    # Configure root logger; artifacts go to files, diagnostics to stderr
    logging.basicConfig(
        level=log_level,
        format='%(message)s',
        stream=sys.stderr,
        force=True,
    )

    if settings.LOG_FORMAT == 'json':
        renderer = structlog.processors.JSONRenderer()
    else:
        renderer = structlog.dev.ConsoleRenderer(colors=False)

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt='iso'),
            structlog.processors.format_exc_info,
            renderer,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )

    # Reduce noise from external libraries
    logging.getLogger('numexpr').setLevel(logging.WARNING)


@lru_cache(maxsize=None)
def get_settings(config_name: str = '') -> Config:
    """Settings for library callers that did not go through create_app"""
    return config[config_name or get_config_name()]()
