import datetime
import platform

from fastapi import APIRouter, Request

from kvspec.api.ping.models import PingResponse
from kvspec.enums import Tags

_TAG = "Ping"

router = APIRouter()


async def _respond_to_ping(request: Request):
    """Respond to a ping request with the Python and package versions and UTC time."""

    return {
        "python_version": platform.python_version(),
        "package_version": request.app.version,
        "datetime": datetime.datetime.now(datetime.timezone.utc),
    }


router.add_api_route(
    "",
    _respond_to_ping,
    methods=["GET"],
    response_model=PingResponse,
    tags=[_TAG, Tags.PUBLIC.value],
)
