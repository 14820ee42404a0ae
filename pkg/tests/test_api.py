import logging
import math

import orjson
import pytest

from kvspec.analytics.intra import kv_avg
from kvspec.api.openapi import build_schema, write_openapi
from tests.utils import BW_HBM, BW_INTER, GB, KV_FULL, WEIGHTS, post_json

_logger = logging.getLogger(__name__)

_ACCEPTANCE = {"kind": "per-token-iid", "per_token_prob": [{"c": 0.25, "p": 0.9}]}

_HARDWARE = {"hbm_bandwidth": BW_HBM, "interconnect_bandwidth": BW_INTER, "gpu_mem": 80 * GB}

_T_ITER = {
    "weights_bytes": WEIGHTS,
    "batch_size": 10,
    "kv_full_bytes": KV_FULL,
    "compression_ratio": 0.25,
    "draft_length": 30,
    "hbm_bandwidth": BW_HBM,
    "interconnect_bandwidth": BW_INTER,
}

_REMOTE = {
    "kv_full_bytes": KV_FULL,
    "compression_ratio": 0.25,
    "output_tokens": 240,
    "draft_length": 30,
    "gamma": 0.8,
    "storage_remote_bandwidth": 10e9,
    "storage_local_bandwidth": 100e9,
    "decode_time": 0.002,
    "verify_forward_time": 0.01,
}

_INTER = {
    "output_tokens": 240,
    "draft_length": 30,
    "gamma": 0.8,
    "compression_ratio": 0.25,
    "kv_full_bytes": KV_FULL,
    "storage_local_bandwidth": 100e9,
    "storage_remote_bandwidth": 10e9,
    "t_tok": 0.01,
    "local_gpus": 2,
    "remote_gpus": 4,
    "b_max": 7,
}


def _intra_body(**knobs) -> dict:
    values = {"offloaded_count": 10, "draft_length": 30, "compression": 0.25}
    values.update(knobs)

    return {
        "hardware": _HARDWARE,
        "weights_bytes": WEIGHTS,
        "kv_full_bytes": KV_FULL,
        "acceptance": _ACCEPTANCE,
        "batch_size": 10,
        "knobs": values,
    }


def _optimize_body(**grids) -> dict:
    values = {"batch_sizes": [10], "x": [4, 16, 30], "c": [0.25], "l": [1, 2]}
    values.update(grids)

    return {
        "hardware": _HARDWARE,
        "weights_bytes": WEIGHTS,
        "kv_full_bytes": KV_FULL,
        "acceptance": _ACCEPTANCE,
        "grids": values,
    }


def test_t_iter(client):
    resp_json = post_json(client, "/analyze/t-iter", _T_ITER)

    assert resp_json["t_iter_s"] == pytest.approx(0.037, abs=1.5e-3)
    assert resp_json["t_iter_s"] == max(resp_json["t_gpu_s"], resp_json["t_xfer_s"])
    assert resp_json["kv_avg_bytes"] == pytest.approx(kv_avg(30, 0.25, KV_FULL))


def test_t_iter_without_interconnect_limit(client):
    body = {k: v for k, v in _T_ITER.items() if k != "interconnect_bandwidth"}
    resp_json = post_json(client, "/analyze/t-iter", body)

    assert resp_json["t_xfer_s"] == 0.0
    assert resp_json["t_iter_s"] == resp_json["t_gpu_s"]


def test_remote_latency(client):
    resp_json = post_json(client, "/analyze/remote-latency", _REMOTE)

    assert resp_json["latency_s"] == pytest.approx(0.8, rel=1e-12)
    assert resp_json["startup_s"] == pytest.approx(0.1)
    assert resp_json["cycle_s"] == pytest.approx(0.07)
    assert resp_json["cycles"] == pytest.approx(10.0)


def test_intra_feasible(client):
    resp_json = post_json(client, "/analyze/intra", _intra_body())

    assert resp_json["feasible"] is True
    assert resp_json["constraint"] is None
    assert resp_json["throughput_tok_s"] > 0
    assert resp_json["baseline_tok_s"] == pytest.approx(7 * BW_HBM / (WEIGHTS + 7 * KV_FULL))


def test_intra_reports_the_violated_constraint(client):
    resp_json = post_json(client, "/analyze/intra", _intra_body(offloaded_count=0))

    assert resp_json["feasible"] is False
    assert resp_json["constraint"] == "memory"
    assert resp_json["throughput_tok_s"] is None


def test_intra_invalid_knobs_are_unprocessable(client):
    resp_json = post_json(client, "/analyze/intra", _intra_body(offloaded_count=11), 422)
    assert resp_json["message"]


def test_intra_optimize(client):
    resp_json = post_json(client, "/analyze/intra/optimize", _optimize_body())

    assert resp_json["feasible"] is True
    assert resp_json["batch_size"] == 10
    assert resp_json["knobs"]["offloaded_count"] > 0
    assert resp_json["knobs"]["draft_length"] in (4, 16, 30)


def test_intra_optimize_empty_search_space(client):
    body = _optimize_body(batch_sizes=[4], x=[1], l=[8])
    body["hardware"] = {**_HARDWARE, "gpu_mem": 51 * GB}

    resp_json = post_json(client, "/analyze/intra/optimize", body, 422)
    assert resp_json["message"]


def test_intra_optimize_grid_limit(client, monkeypatch):
    monkeypatch.setenv("KVSPEC_API_MAX_GRID_POINTS", "10")

    resp_json = post_json(client, "/analyze/intra/optimize", _optimize_body(), 400)
    assert "limit is 10" in resp_json["message"]


def test_terse_errors(client, monkeypatch):
    monkeypatch.setenv("KVSPEC_API_MAX_GRID_POINTS", "10")
    monkeypatch.setenv("KVSPEC_VERBOSE_ERRORS", "false")

    resp_json = post_json(client, "/analyze/intra/optimize", _optimize_body(), 400)
    assert resp_json["message"] == "ContractError"


def test_inter(client):
    resp_json = post_json(client, "/analyze/inter", _INTER)

    assert resp_json["throughput_tok_s"] > 0
    assert set(resp_json["rates"]) == {"B1", "B2", "P1-cached", "P1-stateless", "P2-cached", "P2-stateless"}
    assert resp_json["binding"]
    assert all(math.isfinite(v) for v in resp_json["usage"].values())


def test_inter_without_remote_gpus(client):
    resp_json = post_json(client, "/analyze/inter", {**_INTER, "remote_gpus": 0})

    for path, rate in resp_json["rates"].items():
        if path != "B1":
            assert rate == pytest.approx(0.0, abs=1e-12)


def test_inter_path_subset(client):
    resp_json = post_json(client, "/analyze/inter", {**_INTER, "paths": ["B1", "B2"]})
    assert set(resp_json["rates"]) == {"B1", "B2"}


def test_compose(client):
    body = {"draft_length": 30, "gamma": 0.8, "d_e": 3, "gamma_e": 0.5}
    resp_json = post_json(client, "/analyze/compose", body)

    assert resp_json["accepted_length"] == pytest.approx(48.0)
    assert resp_json["multiplier"] == pytest.approx(2.0)

    plain = post_json(client, "/analyze/compose", {"draft_length": 30, "gamma": 0.8})
    assert plain["accepted_length"] == pytest.approx(24.0)


def test_compose_needs_gamma_e(client):
    resp_json = post_json(client, "/analyze/compose", {"draft_length": 30, "gamma": 0.8, "d_e": 3}, 422)
    assert "gamma_e" in resp_json["message"]


def test_request_validation(client):
    post_json(client, "/analyze/t-iter", {**_T_ITER, "draft_length": 0}, 422)
    post_json(client, "/analyze/remote-latency", {**_REMOTE, "gamma": 0.0}, 422)
    post_json(client, "/analyze/inter", {**_INTER, "paths": ["B3"]}, 422)


def test_openapi_schema(tmp_path):
    schema = build_schema()

    for path in (
        "/ping",
        "/analyze/t-iter",
        "/analyze/remote-latency",
        "/analyze/intra",
        "/analyze/intra/optimize",
        "/analyze/inter",
        "/analyze/compose",
    ):
        assert path in schema["paths"]

    target = tmp_path / "openapi.json"
    write_openapi(["--path", str(target)])

    with open(target, "rb") as fh:
        written = orjson.loads(fh.read())

    assert written["paths"].keys() == schema["paths"].keys()
