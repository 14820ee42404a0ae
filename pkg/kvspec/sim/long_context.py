"""
Long-context pipeline: one GPU drafts on compressed KV held in HBM and
verifies on full KV reloaded from host memory over the interconnect.

Staggered runs drive the scheduler runtime one iteration per tick. The
lock-step and sequential-verify comparisons, and the full-KV baseline, run
on the same iteration clock.
"""

import dataclasses
import logging
import math
from typing import Dict, Hashable, Iterable, List, Optional, Set

from kvspec.core.models import Request, SystemConfig
from kvspec.enums import EventKind, IterationTimeMode, Scenario, Schedule
from kvspec.exceptions import ContractError
from kvspec.scheduler.models import StepOutcome
from kvspec.scheduler.runtime import SchedulerRuntime
from kvspec.sim.credit import VerifyCredit
from kvspec.sim.events import EventQueue
from kvspec.sim.models import MetricsRecorder, SimMetrics

_logger = logging.getLogger(__name__)

_LANDED_REL_TOL = 1e-9


def _recorder(config: SystemConfig, schedule: Schedule, workload: List[Request]) -> MetricsRecorder:
    return MetricsRecorder(
        schedule=schedule,
        scenario=config.scenario_kind,
        hbm_capacity=config.hardware.gpu_mem,
        batch_size=len(workload),
        draft_length=config.draft_length,
        compression_ratio=config.scenario.compression_ratio,
    )


def _check_scenario(config: SystemConfig):
    if config.scenario_kind != Scenario.LONG_CONTEXT:
        raise ContractError(
            f"scenario is {config.scenario_kind.value}, expected {Scenario.LONG_CONTEXT.value}"
        )


def _check_workload(workload: List[Request]):
    ids = [request.id for request in workload]

    if len(set(ids)) != len(ids):
        raise ContractError("request ids must be unique within a workload")


def _step_wall(config: SystemConfig, outcome: StepOutcome, overhead: float) -> float:
    if config.iteration_time_mode == IterationTimeMode.FIXED:
        return outcome.iteration_time

    gpu = outcome.hbm_read_bytes / config.hardware.hbm_bandwidth
    return max(gpu, outcome.link_time) + overhead


@dataclasses.dataclass
class _Reload:
    deadline: int
    nbytes: int
    remaining: float


class LinkTracker:
    """Reload bytes moved by the delivered link, earliest verify first.

    Each iteration the link moves `bandwidth * T_iter` bytes. A reload lands
    once all of its bytes have moved; with the planned bandwidth every reload
    lands by its verify iteration.
    """

    def __init__(self, bandwidth: float):
        if bandwidth <= 0:
            raise ValueError("link bandwidth must be > 0")

        self.bandwidth = bandwidth
        self.backlog: Dict[Hashable, _Reload] = {}
        self.landed: Set[Hashable] = set()

    def landed_through(self, runtime: SchedulerRuntime) -> Set[Hashable]:
        """Reloads complete by the end of the runtime's next iteration."""

        rings = runtime.rings

        for res in rings.reservations.values():
            if res.span_start == 0:
                self.backlog[res.request_id] = _Reload(
                    deadline=runtime.iteration + res.verify_iteration,
                    nbytes=res.bytes,
                    remaining=float(res.bytes),
                )

        capacity = self.bandwidth * max(rings.iteration_time, float(rings.bw_ring[0]))

        for request_id in sorted(self.backlog, key=lambda rid: self.backlog[rid].deadline):
            if capacity <= 0:
                break

            reload = self.backlog[request_id]
            moved = min(capacity, reload.remaining)
            reload.remaining -= moved
            capacity -= moved

            if reload.remaining <= _LANDED_REL_TOL * reload.nbytes:
                del self.backlog[request_id]
                self.landed.add(request_id)

        return set(self.landed)

    def consume(self, request_ids: Iterable[Hashable]):
        self.landed.difference_update(request_ids)


def _deadlocked(runtime: SchedulerRuntime, outcome: StepOutcome) -> bool:
    busy = outcome.drafting or outcome.verified_sessions or outcome.decoding
    return (
        not busy
        and not runtime.rings.reservations
        and not runtime.stalled
        and len(runtime.waiting) == len(runtime.sessions)
    )


def _run_iteration_loop(
    config: SystemConfig,
    workload: List[Request],
    schedule: Schedule,
    credit: VerifyCredit,
    overhead: float,
    link: Optional[LinkTracker] = None,
) -> SimMetrics:
    """Event loop shared by the staggered schedule and the full-KV baseline.

    Without a `link` tracker every reload is taken to land on time.
    """

    recorder = _recorder(config, schedule, workload)
    runtime = SchedulerRuntime(config)
    arrivals: Dict[int, float] = {}
    pending: List[Request] = []
    queue = EventQueue()
    tick_scheduled = False

    for request in workload:
        queue.push(request.arrival, EventKind.REQUEST_ARRIVAL, request.id, request)

    while queue:
        event = queue.pop()

        if event.kind == EventKind.REQUEST_ARRIVAL:
            pending.append(event.payload)
            arrivals[event.request_id] = event.time

            if not tick_scheduled:
                queue.push(max(event.time, recorder.now), EventKind.ITERATION_TICK)
                tick_scheduled = True

        elif event.kind == EventKind.ITERATION_TICK:
            tick_scheduled = False
            recorder.idle_until(event.time)

            if pending:
                runtime.add_requests(pending)
                pending = []

            landed = link.landed_through(runtime) if link is not None else None
            outcome = runtime.execution_step(credit, landed)
            wall = _step_wall(config, outcome, overhead)
            gpu = outcome.hbm_read_bytes / config.hardware.hbm_bandwidth

            if link is not None:
                link.consume(outcome.verified_sessions)

            recorder.observe_hbm(outcome.peak_hbm)
            recorder.late += len(outcome.late)
            recorder.iteration(
                wall,
                outcome.tokens,
                verifies=len(outcome.verified_sessions),
                link_time=outcome.link_time,
                stall=max(0.0, outcome.link_time - gpu) + (wall if runtime.stalled else 0.0),
            )

            end = event.time + wall

            for request_id in outcome.verified_sessions:
                queue.push(end, EventKind.VERIFY_COMPLETE, request_id)

            for request_id in outcome.completed:
                queue.push(end, EventKind.REQUEST_DONE, request_id)

            if runtime.active and _deadlocked(runtime, outcome):
                _logger.warning(
                    "%s requests can never be admitted; stopping the %s run",
                    len(runtime.waiting),
                    schedule.value,
                )
                recorder.feasible = False
                break

            if runtime.active:
                queue.push(end, EventKind.ITERATION_TICK)
                tick_scheduled = True

        elif event.kind == EventKind.VERIFY_COMPLETE:
            _logger.debug("Request %s verified at %.6f", event.request_id, event.time)

        elif event.kind == EventKind.REQUEST_DONE:
            recorder.finish_request(event.request_id, event.time - arrivals[event.request_id])

    return recorder.build(len(workload))


def _arrived(pending: List[Request], now: float) -> List[Request]:
    ready = [r for r in pending if r.arrival <= now]
    pending[:] = [r for r in pending if r.arrival > now]
    return ready


def _run_cycles(
    config: SystemConfig,
    workload: List[Request],
    schedule: Schedule,
    credit: VerifyCredit,
) -> SimMetrics:
    """Draft phase for the whole batch, then reloads and verifies.

    Reloads start when drafting ends. Lock-step moves every full KV back at
    once and verifies the batch in one iteration with the compressed caches
    parked in host memory. Sequential-verify reloads and verifies one
    request per iteration with the compressed caches left resident.
    """

    hw = config.hardware
    M = config.model.weights_bytes
    x = config.draft_length
    overhead = config.iteration_overhead
    recorder = _recorder(config, schedule, workload)
    pending = sorted(workload, key=lambda r: (r.arrival, r.id))
    emitted: Dict[int, float] = {}
    active: List[Request] = []

    def iteration_wall(read_bytes: int) -> float:
        if config.iteration_time_mode == IterationTimeMode.FIXED:
            return config.runtime.fixed_iteration_time
        return read_bytes / hw.hbm_bandwidth + overhead

    def verify(request: Request) -> float:
        remaining = request.output_tokens - emitted[request.id]
        tokens = min(credit.tokens(request, x), remaining)
        emitted[request.id] = (
            float(request.output_tokens) if tokens >= remaining else emitted[request.id] + tokens
        )
        return tokens

    while pending or active:
        if not active:
            recorder.idle_until(pending[0].arrival)

        for request in _arrived(pending, recorder.now):
            active.append(request)
            emitted[request.id] = 0.0

        compressed = sum(r.kv_compressed_bytes for r in active)

        for _ in range(x):
            recorder.observe_hbm(M + compressed)
            recorder.iteration(iteration_wall(M + compressed), 0.0)

        if schedule == Schedule.LOCKSTEP:
            full = sum(r.kv_full_bytes for r in active)
            recorder.exposed_transfer(full / hw.interconnect_bandwidth)
            recorder.observe_hbm(M + full)
            tokens = math.fsum(verify(r) for r in active)
            recorder.iteration(iteration_wall(M + full), tokens, verifies=len(active))
        else:
            for request in active:
                recorder.exposed_transfer(request.kv_full_bytes / hw.interconnect_bandwidth)
                recorder.observe_hbm(M + compressed + request.kv_full_bytes)
                tokens = verify(request)
                recorder.iteration(
                    iteration_wall(M + request.kv_full_bytes), tokens, verifies=1
                )

        done = [r for r in active if emitted[r.id] >= r.output_tokens]

        for request in done:
            recorder.finish_request(request.id, recorder.now - request.arrival)

        active = [r for r in active if emitted[r.id] < r.output_tokens]

    return recorder.build(len(workload))


def simulate_long_context(
    config: SystemConfig,
    workload: List[Request],
    schedule: Schedule = Schedule.STAGGERED,
    seed: Optional[int] = None,
) -> SimMetrics:
    _check_scenario(config)
    _check_workload(workload)
    seed = config.runtime.seed if seed is None else seed
    credit = VerifyCredit(config, seed)

    _logger.info(
        "Simulating %s long-context requests, schedule=%s, x=%s, seed=%s",
        len(workload),
        schedule.value,
        config.draft_length,
        seed,
    )

    if schedule == Schedule.STAGGERED:
        delivered = config.hardware.link_bandwidth
        link = LinkTracker(delivered) if delivered is not None else None
        return _run_iteration_loop(
            config, workload, schedule, credit, config.iteration_overhead, link
        )

    if schedule in (Schedule.LOCKSTEP, Schedule.SEQUENTIAL_VERIFY):
        return _run_cycles(config, workload, schedule, credit)

    if schedule == Schedule.FULL_KV_BASELINE:
        return baseline_long_context(config, workload, seed)

    raise ContractError(f"Unknown schedule: {schedule}")


def baseline_long_context(
    config: SystemConfig, workload: List[Request], seed: Optional[int] = None
) -> SimMetrics:
    """Plain decoding with every admitted request's full KV resident."""

    _check_scenario(config)
    _check_workload(workload)
    seed = config.runtime.seed if seed is None else seed
    plain = [request.copy(update={"speculating": False}) for request in workload]

    return _run_iteration_loop(
        config, plain, Schedule.FULL_KV_BASELINE, VerifyCredit(config, seed), 0.0
    )
