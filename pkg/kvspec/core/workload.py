import io
import logging
import os
from typing import List, Union

import numpy as np
import polars as pl

from kvspec.core.models import ModelSpec, Request, SystemConfig
from kvspec.exceptions import ConfigError

_logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["arrival_s", "kv_full_bytes", "compression_ratio", "output_tokens"]

_TRACE_SCHEMA = {
    "arrival_s": pl.Float64,
    "kv_full_bytes": pl.Int64,
    "compression_ratio": pl.Float64,
    "output_tokens": pl.Int64,
}


def kv_full_bytes(model: ModelSpec, context_tokens: int) -> int:
    if context_tokens < 0:
        raise ValueError("context_tokens must be >= 0")

    return int(context_tokens) * model.kv_bytes_per_token


def _read_trace_frame(source: Union[str, os.PathLike, io.IOBase]) -> pl.DataFrame:
    try:
        df = pl.read_csv(source, schema_overrides=_TRACE_SCHEMA)
    except (pl.exceptions.PolarsError, ValueError) as ex:
        raise ConfigError(f"Malformed workload trace: {ex}") from ex

    df = df.rename({col: col.strip() for col in df.columns})

    if df.columns != TRACE_COLUMNS:
        raise ConfigError(
            "Trace header must be {}, got {}".format(
                ",".join(TRACE_COLUMNS), ",".join(df.columns)
            )
        )

    return df


def load_trace(path: Union[str, os.PathLike]) -> List[Request]:
    """Read a workload trace; request ids follow line order."""

    if not os.path.isfile(path):
        raise FileNotFoundError(f"Trace file not found: {path}")

    df = _read_trace_frame(path)
    requests = trace_requests(df)
    _logger.info("Loaded %s requests from %s", len(requests), path)
    return requests


def parse_trace(text: str) -> List[Request]:
    return trace_requests(_read_trace_frame(io.StringIO(text)))


def trace_requests(df: pl.DataFrame) -> List[Request]:
    return [
        Request(
            id=idx,
            arrival=row["arrival_s"],
            kv_full_bytes=row["kv_full_bytes"],
            compression_ratio=row["compression_ratio"],
            output_tokens=row["output_tokens"],
        )
        for idx, row in enumerate(df.iter_rows(named=True))
    ]


def requests_frame(requests: List[Request]) -> pl.DataFrame:
    return pl.DataFrame(
        {
            "arrival_s": [r.arrival for r in requests],
            "kv_full_bytes": [r.kv_full_bytes for r in requests],
            "compression_ratio": [r.compression_ratio for r in requests],
            "output_tokens": [r.output_tokens for r in requests],
        },
        schema=_TRACE_SCHEMA,
    )


def homogeneous_workload(
    batch_size: int,
    kv_full: int,
    compression_ratio: float,
    output_tokens: int,
    arrival: float = 0.0,
) -> List[Request]:
    return [
        Request(
            id=idx,
            arrival=arrival,
            kv_full_bytes=kv_full,
            compression_ratio=compression_ratio,
            output_tokens=output_tokens,
        )
        for idx in range(batch_size)
    ]


def poisson_workload(
    num_requests: int,
    rate: float,
    kv_full: int,
    compression_ratio: float,
    output_tokens: int,
    seed: int = 0,
) -> List[Request]:
    """Requests with exponential inter-arrival gaps at `rate` requests per second."""

    if rate <= 0:
        raise ValueError("rate must be > 0")

    rng = np.random.default_rng(seed)
    arrivals = np.cumsum(rng.exponential(1.0 / rate, size=num_requests))

    return [
        Request(
            id=idx,
            arrival=float(arrival),
            kv_full_bytes=kv_full,
            compression_ratio=compression_ratio,
            output_tokens=output_tokens,
        )
        for idx, arrival in enumerate(arrivals)
    ]


def workload_from_config(config: SystemConfig) -> List[Request]:
    scenario = config.scenario

    return homogeneous_workload(
        batch_size=scenario.batch_size,
        kv_full=config.kv_full_bytes,
        compression_ratio=scenario.compression_ratio,
        output_tokens=scenario.output_tokens,
    )
