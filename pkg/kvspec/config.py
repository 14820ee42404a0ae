import logging
from typing import Annotated

from fastapi import Depends
from pydantic import BaseSettings

_ENV_PREFIX = "KVSPEC_"
_ENV_NESTED_DELIMITER = "__"

_logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-level settings. Run configurations live in documents, see kvspec.core.loader."""

    class Config:
        env_prefix = _ENV_PREFIX
        env_nested_delimiter = _ENV_NESTED_DELIMITER

    default_seed: int = 0
    enumeration_limit: int = 1_000_000
    ring_safety_checks: bool = False
    verbose_errors: bool = False
    max_fixed_point_rounds: int = 50
    api_max_grid_points: int = 200_000


def get_settings():
    settings = Settings()
    _logger.debug("Settings:\n%s", settings.json(indent=2))
    return settings


SettingsDep = Annotated[Settings, Depends(get_settings)]
