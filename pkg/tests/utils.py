import copy
import logging
import pprint
from typing import List, Optional

import orjson
from fastapi.testclient import TestClient

from kvspec.core.loader import load_config
from kvspec.core.models import SystemConfig

_logger = logging.getLogger(__name__)

GB = 1_000_000_000

WEIGHTS = 50 * GB
KV_FULL = 4 * GB
KV_COMP = 1 * GB
BW_HBM = 1.7e12
BW_INTER = 50e9

_LONG_CONTEXT_DOC = {
    "hardware": {
        "hbm_bandwidth": BW_HBM,
        "interconnect_bandwidth": BW_INTER,
        "gpu_mem": 80 * GB,
    },
    "model": {"weights_bytes": WEIGHTS, "kv_bytes_per_token": 40960},
    "acceptance": {
        "kind": "per-token-iid",
        "per_token_prob": [{"c": 0.25, "p": 0.9}],
    },
    "runtime": {
        "draft_length": 30,
        "lookahead_window": 64,
        "acceptance_realization": "deterministic-mean",
    },
    "scenario": {
        "kind": "long-context",
        "compression_ratio": 0.25,
        "batch_size": 10,
        "kv_full_bytes": KV_FULL,
        "output_tokens": 93,
    },
}

_REMOTE_PREFIX_DOC = {
    "hardware": {
        "hbm_bandwidth": 2e12,
        "interconnect_bandwidth": BW_INTER,
        "storage_local_bandwidth": 100e9,
        "storage_remote_bandwidth": 10e9,
        "gpu_mem": 80 * GB,
        "local_gpus": 1,
        "remote_gpus": 1,
    },
    "model": {"weights_bytes": WEIGHTS, "kv_bytes_per_token": 40960},
    "acceptance": {
        "kind": "tabulated",
        "table": [{"x": 30, "c": 0.25, "gamma": 0.8}],
    },
    "runtime": {
        "draft_length": 30,
        "acceptance_realization": "deterministic-mean",
    },
    "scenario": {
        "kind": "remote-prefix",
        "compression_ratio": 0.25,
        "batch_size": 1,
        "kv_full_bytes": KV_FULL,
        "output_tokens": 240,
        "decode_time": 0.002,
        "verify_forward_time": 0.01,
    },
}


def _merge(doc: dict, overrides: dict) -> dict:
    for section, fields in overrides.items():
        if isinstance(fields, dict) and isinstance(doc.get(section), dict):
            doc[section].update(fields)
        else:
            doc[section] = fields

    return doc


def long_context_doc(**overrides) -> dict:
    """The B=10, M=50 GB, KV_full=4 GB, x=30 long-context setup, with section overrides."""

    return _merge(copy.deepcopy(_LONG_CONTEXT_DOC), overrides)


def remote_prefix_doc(**overrides) -> dict:
    return _merge(copy.deepcopy(_REMOTE_PREFIX_DOC), overrides)


def long_context_config(**overrides) -> SystemConfig:
    return load_config(orjson.dumps(long_context_doc(**overrides)))


def remote_prefix_config(**overrides) -> SystemConfig:
    return load_config(orjson.dumps(remote_prefix_doc(**overrides)))


def write_trace(
    path,
    batch_size: int,
    kv_full: int = KV_FULL,
    compression_ratio: float = 0.25,
    output_tokens: int = 93,
    arrivals: Optional[List[float]] = None,
) -> str:
    arrivals = arrivals or [0.0] * batch_size
    lines = ["arrival_s,kv_full_bytes,compression_ratio,output_tokens"]

    for arrival in arrivals:
        lines.append(f"{arrival},{kv_full},{compression_ratio},{output_tokens}")

    path.write_text("\n".join(lines) + "\n")
    return str(path)


def post_json(the_client: TestClient, url: str, body: dict, status_code: int = 200) -> dict:
    response = the_client.post(url, json=body)
    resp_json = response.json()
    _logger.debug("Response:\n%s", pprint.pformat(resp_json))
    assert response.status_code == status_code
    return resp_json
