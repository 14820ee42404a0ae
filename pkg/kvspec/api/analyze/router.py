import logging
import math

from fastapi import APIRouter

from kvspec.analytics.compose import composed_accept_length, composition_multiplier
from kvspec.analytics.inter import InterParams, all_path_costs
from kvspec.analytics.intra import (
    IntraGrids,
    IntraKnobs,
    IntraParams,
    baseline_throughput,
    evaluate_intra,
    kv_avg,
    optimize_intra,
    t_iter_staggered,
    t_req_remote,
)
from kvspec.analytics.lp import Capacities, optimize_inter
from kvspec.api.analyze.models import (
    ComposeRequest,
    ComposeResponse,
    HardwareBody,
    InterRequest,
    InterResponse,
    IntraKnobsBody,
    IntraOptimizeRequest,
    IntraRequest,
    IntraResponse,
    RemoteLatencyRequest,
    RemoteLatencyResponse,
    TIterRequest,
    TIterResponse,
)
from kvspec.config import SettingsDep
from kvspec.core.acceptance import gamma_fn
from kvspec.enums import Tags
from kvspec.exceptions import ContractError, InfeasibleError

_logger = logging.getLogger(__name__)

_TAG = "Analyze"

router = APIRouter()


def _intra_params(hardware: HardwareBody, weights_bytes: float, kv_full_bytes: float):
    return IntraParams(
        weights_bytes=weights_bytes,
        gpu_mem=hardware.gpu_mem,
        kv_full=kv_full_bytes,
        bw_hbm=hardware.hbm_bandwidth,
        bw_inter=hardware.interconnect_bandwidth,
    )


async def _t_iter(body: TIterRequest):
    """Staggered iteration time: the slower of HBM reads and interconnect reloads."""

    bw_inter = body.interconnect_bandwidth or math.inf
    args = dict(
        weights_bytes=body.weights_bytes,
        batch_size=body.batch_size,
        kv_full=body.kv_full_bytes,
        c=body.compression_ratio,
        x=body.draft_length,
        bw_hbm=body.hbm_bandwidth,
    )

    t_gpu = t_iter_staggered(**args, bw_inter=math.inf)
    t_xfer = body.batch_size * body.kv_full_bytes / (body.draft_length * bw_inter)

    return TIterResponse(
        t_iter_s=t_iter_staggered(**args, bw_inter=bw_inter),
        t_gpu_s=t_gpu,
        t_xfer_s=t_xfer,
        kv_avg_bytes=kv_avg(body.draft_length, body.compression_ratio, body.kv_full_bytes),
    )


async def _remote_latency(body: RemoteLatencyRequest):
    """End-to-end latency of one remote-prefix request."""

    startup = body.compression_ratio * body.kv_full_bytes / body.storage_remote_bandwidth
    cycle = (
        max(
            body.draft_length * body.decode_time,
            body.kv_full_bytes / body.storage_local_bandwidth,
        )
        + body.verify_forward_time
    )

    latency = t_req_remote(
        kv_full=body.kv_full_bytes,
        c=body.compression_ratio,
        K=body.output_tokens,
        x=body.draft_length,
        gamma=body.gamma,
        bw_l=body.storage_remote_bandwidth,
        bw_h=body.storage_local_bandwidth,
        t_decode=body.decode_time,
        t_fwd=body.verify_forward_time,
    )

    return RemoteLatencyResponse(
        latency_s=latency,
        startup_s=startup,
        cycle_s=cycle,
        cycles=body.output_tokens / (body.draft_length * body.gamma),
    )


async def _intra(body: IntraRequest):
    """Throughput of one knob tuple, or the constraint it violates."""

    params = _intra_params(body.hardware, body.weights_bytes, body.kv_full_bytes)
    knobs = IntraKnobs(**body.knobs.dict())
    baseline = baseline_throughput(params)

    try:
        point = evaluate_intra(knobs, params, body.batch_size, gamma_fn(body.acceptance))
    except InfeasibleError as ex:
        _logger.debug("Infeasible knobs %s: %s", knobs, ex)
        return IntraResponse(
            feasible=False,
            constraint=ex.constraint,
            batch_size=body.batch_size,
            knobs=body.knobs,
            baseline_tok_s=baseline,
        )

    return IntraResponse(
        feasible=True,
        batch_size=body.batch_size,
        knobs=body.knobs,
        throughput_tok_s=point.throughput,
        t_gpu_s=point.t_gpu,
        t_xfer_s=point.t_xfer,
        baseline_tok_s=baseline,
    )


async def _intra_optimize(body: IntraOptimizeRequest, settings: SettingsDep):
    """Exhaustive search over the given grids."""

    grids = body.grids
    points = sum(b + 1 for b in grids.batch_sizes) * len(grids.x) * len(grids.c) * len(grids.l)

    if points > settings.api_max_grid_points:
        raise ContractError(
            f"search grid has {points} points, limit is {settings.api_max_grid_points}"
        )

    params = _intra_params(body.hardware, body.weights_bytes, body.kv_full_bytes)
    point = optimize_intra(
        params,
        grids.batch_sizes,
        gamma_fn(body.acceptance),
        IntraGrids(x=grids.x, c=grids.c, l=grids.l),
    )

    return IntraResponse(
        feasible=True,
        batch_size=point.batch_size,
        knobs=IntraKnobsBody(
            offloaded_count=point.knobs.offloaded_count,
            draft_length=point.knobs.draft_length,
            compression=point.knobs.compression,
            cycles_per_load=point.knobs.cycles_per_load,
        ),
        throughput_tok_s=point.throughput,
        t_gpu_s=point.t_gpu,
        t_xfer_s=point.t_xfer,
        baseline_tok_s=baseline_throughput(params),
    )


async def _inter(body: InterRequest):
    """Optimal request rates over the serving paths at fixed occupancy."""

    params = InterParams(
        K=body.output_tokens,
        x=body.draft_length,
        gamma=body.gamma,
        c=body.compression_ratio,
        kv_full=body.kv_full_bytes,
        bw_h=body.storage_local_bandwidth,
        bw_l=body.storage_remote_bandwidth,
        t_tok=body.t_tok,
        t_tok_remote=body.t_tok_remote,
    )
    capacities = Capacities(
        local_gpus=body.local_gpus, remote_gpus=body.remote_gpus, b_max=body.b_max
    )
    solution = optimize_inter(all_path_costs(params, body.paths), capacities, params.K)

    return InterResponse(
        throughput_tok_s=solution.throughput,
        rates={path.value: rate for path, rate in solution.rates.items()},
        binding=solution.binding,
        usage=solution.usage,
    )


async def _compose(body: ComposeRequest):
    return ComposeResponse(
        accepted_length=composed_accept_length(
            body.draft_length, 1.0, body.d_e, body.gamma, body.gamma_e
        ),
        multiplier=composition_multiplier(body.d_e, body.gamma_e),
    )


for path, endpoint, response_model in (
    ("/t-iter", _t_iter, TIterResponse),
    ("/remote-latency", _remote_latency, RemoteLatencyResponse),
    ("/intra", _intra, IntraResponse),
    ("/intra/optimize", _intra_optimize, IntraResponse),
    ("/inter", _inter, InterResponse),
    ("/compose", _compose, ComposeResponse),
):
    router.add_api_route(
        path,
        endpoint,
        methods=["POST"],
        response_model=response_model,
        tags=[_TAG, Tags.ANALYTICS.value],
    )
