import argparse
import logging
from importlib.metadata import PackageNotFoundError, version

import uvicorn
from fastapi import FastAPI, Request, status
from fastapi.responses import JSONResponse

import kvspec.api.analyze.router
import kvspec.api.ping.router
from kvspec.config import get_settings
from kvspec.enums import Prefixes
from kvspec.exceptions import ContractError, KVSpecError

_logger = logging.getLogger(__name__)


def raise_if_trailing_slashes(the_app: FastAPI):
    """Checks the app's routes for trailing slashes and exits if any are found.
    https://github.com/tiangolo/fastapi/discussions/7298#discussioncomment-5135720"""

    for route in the_app.routes:
        if route.path.endswith("/"):
            if route.path == "/":
                continue

            err_msg = (
                "Aborting: paths may not end with a slash. Check route: {}".format(
                    route
                )
            )

            _logger.error(err_msg)
            raise Exception(err_msg)


try:
    _pkg_version = version("kvspec")
except PackageNotFoundError:
    _pkg_version = "development"

app = FastAPI(
    title="kvspec what-if API",
    description="Closed-form throughput and latency models for speculative decoding with compressed-KV drafting.",
    version=_pkg_version,
)


@app.exception_handler(KVSpecError)
async def kvspec_exception_handler(request: Request, exc: KVSpecError):
    settings = get_settings()
    status_code = (
        status.HTTP_400_BAD_REQUEST
        if isinstance(exc, ContractError)
        else status.HTTP_422_UNPROCESSABLE_ENTITY
    )
    msg = str(exc) if settings.verbose_errors else type(exc).__name__
    _logger.warning("Analysis error: %s", exc)
    return JSONResponse(status_code=status_code, content={"message": msg})


@app.exception_handler(ValueError)
async def value_exception_handler(request: Request, exc: ValueError):
    _logger.warning("Invalid analysis input: %s", exc)

    return JSONResponse(
        status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
        content={"message": str(exc)},
    )


app.include_router(
    kvspec.api.ping.router.router,
    prefix=Prefixes.PING.value,
)

app.include_router(
    kvspec.api.analyze.router.router,
    prefix=Prefixes.ANALYZE.value,
)

raise_if_trailing_slashes(the_app=app)


def run():
    parser = argparse.ArgumentParser(description="Serve the kvspec what-if API.")
    parser.add_argument("--host", type=str, default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    args = parser.parse_args()

    _logger.info("Serving on %s:%s", args.host, args.port)
    uvicorn.run(app, host=args.host, port=args.port)
