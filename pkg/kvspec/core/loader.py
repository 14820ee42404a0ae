import hashlib
import logging
import os
from typing import Union

import orjson
from pydantic import ValidationError

from kvspec.core.models import SystemConfig
from kvspec.exceptions import ConfigError, ConfigValidationError

_logger = logging.getLogger(__name__)


def load_config(text: Union[str, bytes]) -> SystemConfig:
    """Parse and validate a JSON run configuration document."""

    try:
        doc = orjson.loads(text)
    except orjson.JSONDecodeError as ex:
        raise ConfigError(f"Malformed configuration document: {ex}") from ex

    if not isinstance(doc, dict):
        raise ConfigError("Configuration document must be a JSON object")

    try:
        config = SystemConfig.parse_obj(doc)
    except ValidationError as ex:
        raise ConfigValidationError(str(ex)) from ex

    _logger.debug("Loaded configuration (digest=%s)", config_digest(config))
    return config


def load_config_file(path: Union[str, os.PathLike]) -> SystemConfig:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Configuration file not found: {path}")

    with open(path, "rb") as fh:
        return load_config(fh.read())


def config_document(config: SystemConfig) -> dict:
    return orjson.loads(dump_config(config))


def dump_config(config: SystemConfig) -> bytes:
    return orjson.dumps(config.dict(), option=orjson.OPT_SORT_KEYS)


def config_digest(config: SystemConfig) -> str:
    return hashlib.sha256(dump_config(config)).hexdigest()
