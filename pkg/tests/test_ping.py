import logging
import pprint

_logger = logging.getLogger(__name__)


def test_ping(client):
    """Test the ping endpoint."""

    response = client.get("/ping")
    resp_json = response.json()
    _logger.debug("Response:\n%s", pprint.pformat(resp_json))
    assert response.status_code == 200
    assert resp_json["datetime"]
    assert resp_json["python_version"]
    assert resp_json["package_version"]


def test_ping_rejects_trailing_slash(client):
    response = client.get("/ping/", follow_redirects=False)
    assert response.status_code in (307, 404)
