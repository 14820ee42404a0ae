import argparse
import logging
from typing import Optional

import orjson
from fastapi.openapi.utils import get_openapi

from kvspec.api.main import app

_logger = logging.getLogger(__name__)


def build_schema(openapi_version: Optional[str] = None) -> dict:
    return get_openapi(
        title=app.title,
        version=app.version,
        openapi_version=openapi_version or app.openapi_version,
        description=app.description,
        routes=app.routes,
    )


def write_openapi(argv=None):
    parser = argparse.ArgumentParser(description="Write the what-if API schema as JSON.")
    parser.add_argument("--path", type=str, default="openapi.json")
    parser.add_argument("--openapi-version", type=str, default=None)
    args = parser.parse_args(argv)

    schema = build_schema(args.openapi_version)
    _logger.info("Writing OpenAPI %s schema to: %s", schema["openapi"], args.path)

    with open(args.path, "wb") as fh:
        fh.write(orjson.dumps(schema, option=orjson.OPT_INDENT_2))
