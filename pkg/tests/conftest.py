import logging
import os

import orjson
import pytest
from fastapi.testclient import TestClient

from kvspec.api.main import app

_ENV_LOG_LEVEL = "LOG_LEVEL"
_ENV_RING_SAFETY_CHECKS = "KVSPEC_RING_SAFETY_CHECKS"
_ENV_VERBOSE_ERRORS = "KVSPEC_VERBOSE_ERRORS"
_ENV_DEFAULT_SEED = "KVSPEC_DEFAULT_SEED"

_ENV_KEYS = [
    _ENV_LOG_LEVEL,
    _ENV_RING_SAFETY_CHECKS,
    _ENV_VERBOSE_ERRORS,
    _ENV_DEFAULT_SEED,
]

_original_env = {}

_test_env = {
    _ENV_LOG_LEVEL: "DEBUG",
    _ENV_RING_SAFETY_CHECKS: "true",
    _ENV_VERBOSE_ERRORS: "true",
    _ENV_DEFAULT_SEED: os.getenv("TESTS_KVSPEC_SEED", "0"),
}

_logger = logging.getLogger(__name__)


def pytest_configure():
    """Set the environment variables for the tests."""

    _logger.debug("Setting environment variables for tests")

    for key in _ENV_KEYS:
        _original_env[key] = os.environ.get(key, None)

    for key in _ENV_KEYS:
        val = _test_env.get(key)

        if val is not None:
            os.environ[key] = val


def pytest_unconfigure():
    """Restore the original environment variables."""

    _logger.debug("Restoring original environment variables")

    for key in _ENV_KEYS:
        if _original_env.get(key) is None:
            os.environ.pop(key, None)
        else:
            os.environ[key] = _original_env.get(key)


@pytest.fixture()
def client():
    yield TestClient(app=app)


@pytest.fixture()
def config_path(tmp_path):
    """Write a configuration document and return its path."""

    def write(doc: dict, name: str = "config.json") -> str:
        path = tmp_path / name
        path.write_bytes(orjson.dumps(doc))
        return str(path)

    return write
