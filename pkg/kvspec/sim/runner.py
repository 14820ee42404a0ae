import logging
import math
from typing import List, Optional, Sequence, Tuple

import polars as pl

from kvspec.compressor.compressors import assert_single_mode, build_compressor
from kvspec.compressor.models import SyntheticKV
from kvspec.core.models import Request, SystemConfig
from kvspec.enums import Scenario, Schedule
from kvspec.exceptions import ContractError
from kvspec.sim.long_context import baseline_long_context, simulate_long_context
from kvspec.sim.models import CSV_COLUMNS, SimMetrics
from kvspec.sim.remote_prefix import baseline_remote_prefix, simulate_remote_prefix

_logger = logging.getLogger(__name__)

LONG_CONTEXT_SCHEDULES = (
    Schedule.STAGGERED,
    Schedule.LOCKSTEP,
    Schedule.SEQUENTIAL_VERIFY,
    Schedule.FULL_KV_BASELINE,
)

REMOTE_PREFIX_SCHEDULES = (Schedule.STAGGERED, Schedule.FULL_KV_BASELINE)


def schedules_for(scenario: Scenario) -> Tuple[Schedule, ...]:
    if scenario == Scenario.LONG_CONTEXT:
        return LONG_CONTEXT_SCHEDULES

    return REMOTE_PREFIX_SCHEDULES


def simulate_baseline_full_kv(
    config: SystemConfig, workload: List[Request], seed: Optional[int] = None
) -> SimMetrics:
    if config.scenario_kind == Scenario.LONG_CONTEXT:
        return baseline_long_context(config, workload, seed)

    return baseline_remote_prefix(config, workload, seed)


def _synthetic_kv(config: SystemConfig, request: Request) -> SyntheticKV:
    per_token = config.model.kv_bytes_per_token

    return SyntheticKV(
        num_layers=1,
        num_heads=1,
        num_tokens=max(1, request.kv_full_bytes // per_token),
        head_bytes=per_token,
    )


def compress_workload(
    config: SystemConfig, workload: List[Request], seed: Optional[int] = None
) -> List[Request]:
    """Set each speculating request's drafter payload from the configured compressor.

    Requests keep `c * kv_full_bytes` when the run has no compressor. The
    payload is scaled from whole tokens back to the request's byte size.
    """

    spec = config.compressor

    if spec is None:
        return list(workload)

    seed = config.runtime.seed if seed is None else seed
    compressor = build_compressor(spec, seed=seed)
    metas = []
    compressed = []

    for request in workload:
        if not request.speculating or math.isclose(request.compression_ratio, 1.0):
            compressed.append(request)
            continue

        kv = _synthetic_kv(config, request)
        same_ratio = math.isclose(request.compression_ratio, spec.target_ratio, rel_tol=1e-12)
        meta = compressor.compress(kv, None if same_ratio else request.compression_ratio)
        metas.append(meta)
        payload = meta.payload_bytes * request.kv_full_bytes // kv.full_bytes
        compressed.append(request.copy(update={"compressed_bytes": payload}))

    assert_single_mode(metas)
    _logger.debug(
        "Compressed %s requests with %s (%s)", len(metas), spec.kind.value, spec.mode.value
    )
    return compressed


def simulate(
    config: SystemConfig,
    workload: List[Request],
    schedule: Schedule = Schedule.STAGGERED,
    seed: Optional[int] = None,
) -> SimMetrics:
    """Run `workload` under `schedule` in the configured scenario."""

    if schedule not in schedules_for(config.scenario_kind):
        raise ContractError(
            f"schedule {schedule.value} is not defined for {config.scenario_kind.value}"
        )

    if schedule == Schedule.FULL_KV_BASELINE:
        return simulate_baseline_full_kv(config, workload, seed)

    workload = compress_workload(config, workload, seed)

    if config.scenario_kind == Scenario.REMOTE_PREFIX:
        return simulate_remote_prefix(config, workload, seed)

    return simulate_long_context(config, workload, schedule, seed)


def metrics_frame(rows: Sequence[SimMetrics]) -> pl.DataFrame:
    return pl.DataFrame([m.csv_row() for m in rows]).select(CSV_COLUMNS)


def compare_schedules(
    config: SystemConfig,
    workload: List[Request],
    seed: Optional[int] = None,
    schedules: Sequence[Schedule] = LONG_CONTEXT_SCHEDULES,
) -> Tuple[pl.DataFrame, List[SimMetrics]]:
    """One run per schedule over the same workload and seed."""

    if config.scenario_kind != Scenario.LONG_CONTEXT:
        raise ContractError("schedule comparison needs a long-context scenario")

    results = [simulate(config, workload, schedule, seed) for schedule in schedules]

    for metrics in results:
        _logger.info(
            "%s: %.3f tok/s, peak HBM %s, link busy %.3f",
            metrics.schedule.value,
            metrics.throughput,
            metrics.peak_hbm,
            metrics.interconnect_busy_fraction,
        )

    return metrics_frame(results), results
