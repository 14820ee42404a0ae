"""
Remote-prefix pipeline.

A remote GPU pulls the compressed prefix KV over the slow storage link and
drafts on it, while a local GPU prefetches the full KV over the fast link
and verifies. A cycle lasts max(x * T_decode, KV_full / BW_h) + T_fwd when
neither pool is contended.
"""

import collections
import dataclasses
import logging
from typing import Deque, Dict, List, Optional, Tuple

import numpy as np

from kvspec.analytics.intra import b_max, t_tok
from kvspec.core.acceptance import expected_gamma
from kvspec.core.models import Request, SystemConfig
from kvspec.enums import AcceptanceRealization, EventKind, Scenario, Schedule
from kvspec.exceptions import ContractError
from kvspec.sim.credit import VerifyCredit
from kvspec.sim.events import EventQueue
from kvspec.sim.models import MetricsRecorder, SimMetrics

_logger = logging.getLogger(__name__)


@dataclasses.dataclass
class _GPU:
    index: int
    link_free: float = 0.0
    compute_free: float = 0.0
    slots_used: int = 0
    # (time, delta) of KV bytes held on the GPU
    hbm_events: List[Tuple[float, int]] = dataclasses.field(default_factory=list)

    def hold(self, start: float, end: float, nbytes: int):
        self.hbm_events.append((start, nbytes))
        self.hbm_events.append((end, -nbytes))

    def peak_kv(self) -> int:
        if not self.hbm_events:
            return 0

        # releases sort before acquisitions at the same instant
        ordered = sorted(self.hbm_events, key=lambda e: (e[0], e[1]))
        return int(np.max(np.cumsum([delta for _, delta in ordered])))


@dataclasses.dataclass
class _Job:
    request: Request
    remote: Optional[_GPU] = None
    pinned: Optional[_GPU] = None
    pinned_since: float = 0.0
    resident_since: float = 0.0
    emitted: float = 0.0

    @property
    def remaining(self) -> float:
        return self.request.output_tokens - self.emitted


class RemotePrefixSimulator:
    """Event-driven run of one remote-prefix workload.

    The staggered schedule is the speculative pipeline above. The full-KV
    baseline loads the whole prefix to a local GPU and decodes there.
    """

    def __init__(
        self,
        config: SystemConfig,
        workload: List[Request],
        schedule: Schedule = Schedule.STAGGERED,
        seed: Optional[int] = None,
    ):
        if config.scenario_kind != Scenario.REMOTE_PREFIX:
            raise ContractError(
                f"scenario is {config.scenario_kind.value}, expected {Scenario.REMOTE_PREFIX.value}"
            )

        if schedule not in (Schedule.STAGGERED, Schedule.FULL_KV_BASELINE):
            raise ContractError(f"schedule {schedule.value} is not defined for remote-prefix")

        hw = config.hardware
        speculative = schedule == Schedule.STAGGERED

        if hw.local_gpus < 1 or (speculative and hw.remote_gpus < 1):
            raise ContractError("remote-prefix needs at least one local and one remote GPU")

        self.config = config
        self.workload = sorted(workload, key=lambda r: (r.arrival, r.id))
        self.schedule = schedule
        self.seed = config.runtime.seed if seed is None else seed
        self.deterministic = (
            config.runtime.acceptance_realization == AcceptanceRealization.DETERMINISTIC_MEAN
        )
        # A cycle credits the accepted drafts only, x * gamma on average in both realizations
        self.credit = VerifyCredit(config, self.seed, bonus=False)
        self.local = [_GPU(index=i) for i in range(hw.local_gpus)]
        self.remote = [_GPU(index=i) for i in range(hw.remote_gpus)]
        self.queue = EventQueue()
        self.waiting: Deque[int] = collections.deque()
        self.jobs: Dict[int, _Job] = {}
        self.recorder = MetricsRecorder(
            schedule=schedule,
            scenario=Scenario.REMOTE_PREFIX,
            hbm_capacity=hw.gpu_mem,
            batch_size=len(workload),
            draft_length=config.draft_length,
            compression_ratio=config.scenario.compression_ratio,
            links=hw.local_gpus + (hw.remote_gpus if speculative else 0),
        )

        if len({r.id for r in workload}) != len(workload):
            raise ContractError("request ids must be unique within a workload")

        if speculative and self.deterministic:
            for request in self.workload:
                if expected_gamma(config.acceptance, config.draft_length, request.compression_ratio) <= 0:
                    raise ContractError(
                        f"request {request.id}: zero acceptance never finishes in deterministic-mean mode"
                    )

    def _slots(self, request: Request) -> int:
        return b_max(
            self.config.hardware.gpu_mem, self.config.model.weights_bytes, request.kv_full_bytes
        )

    def _decode_time(self, request: Request, occupancy: int) -> float:
        if self.config.scenario.decode_time is not None:
            return self.config.scenario.decode_time

        return t_tok(
            self.config.model.weights_bytes,
            max(occupancy, 1),
            request.kv_full_bytes,
            self.config.hardware.hbm_bandwidth,
        )

    def _t_h(self, request: Request) -> float:
        return request.kv_full_bytes / self.config.hardware.storage_local_bandwidth

    def _startup(self, request: Request) -> float:
        return request.kv_compressed_bytes / self.config.hardware.storage_remote_bandwidth

    def _earliest(self, gpus: List[_GPU], now: float, request: Request) -> Optional[_GPU]:
        limit = self._slots(request)
        free = [g for g in gpus if g.slots_used < limit]

        if not free:
            return None

        return min(free, key=lambda g: (max(now, g.link_free), g.compute_free, g.index))

    # -- admission -----------------------------------------------------------

    def _dispatch(self, now: float):
        for _ in range(len(self.waiting)):
            job = self.jobs[self.waiting.popleft()]

            if not self._place(job, now):
                self.waiting.append(job.request.id)

    def _place(self, job: _Job, now: float) -> bool:
        request = job.request

        if self.schedule == Schedule.FULL_KV_BASELINE:
            gpu = self._earliest(self.local, now, request)
            if gpu is None:
                return False
            self._run_baseline(job, gpu, now)
            return True

        gpu = self._earliest(self.remote, now, request)

        if gpu is None:
            return False

        gpu.slots_used += 1
        job.remote = gpu
        job.resident_since = now
        start = max(now, gpu.link_free)
        end = start + self._startup(request)
        gpu.link_free = end
        self.recorder.transfer(end - start)
        self.queue.push(end, EventKind.TRANSFER_COMPLETE, request.id)
        return True

    # -- speculative cycles ----------------------------------------------------

    def _verifier(self, job: _Job, now: float) -> Tuple[_GPU, float]:
        """Local GPU for the next verify and the time its full KV is ready."""

        request = job.request

        if job.pinned is not None:
            return job.pinned, now

        if self.config.scenario.verify_cached:
            gpu = self._earliest(self.local, now, request)

            if gpu is not None:
                gpu.slots_used += 1
                job.pinned = gpu
                job.pinned_since = max(now, gpu.link_free)
                return gpu, self._load(gpu, request, now)

            _logger.debug("No cached slot for request %s, verifying stateless", request.id)

        gpu = min(
            self.local,
            key=lambda g: (max(max(now, g.link_free) + self._t_h(request), g.compute_free), g.index),
        )
        return gpu, self._load(gpu, request, now)

    def _load(self, gpu: _GPU, request: Request, now: float) -> float:
        start = max(now, gpu.link_free)
        end = start + self._t_h(request)
        gpu.link_free = end
        self.recorder.transfer(end - start)
        return end

    def _start_cycle(self, job: _Job, now: float):
        request = job.request
        x = self.config.draft_length
        draft_end = now + x * self._decode_time(request, job.remote.slots_used)
        gpu, ready = self._verifier(job, now)
        verify_start = max(draft_end, ready, gpu.compute_free)
        verify_end = verify_start + self.config.scenario.verify_forward_time
        gpu.compute_free = verify_end

        if job.pinned is None:
            gpu.hold(ready - self._t_h(request), verify_end, request.kv_full_bytes)

        self.recorder.stall += verify_start - draft_end
        self.queue.push(verify_end, EventKind.VERIFY_COMPLETE, request.id)

    def _on_verify(self, job: _Job, now: float):
        tokens = min(self.credit.tokens(job.request, self.config.draft_length), job.remaining)
        job.emitted = (
            float(job.request.output_tokens) if tokens >= job.remaining else job.emitted + tokens
        )
        self.recorder.verified(now, tokens)

        if job.remaining <= 0:
            self.queue.push(now, EventKind.REQUEST_DONE, job.request.id)
        else:
            self._start_cycle(job, now)

    # -- baseline --------------------------------------------------------------

    def _run_baseline(self, job: _Job, gpu: _GPU, now: float):
        request = job.request
        gpu.slots_used += 1
        job.pinned = gpu
        start = max(now, gpu.link_free)
        job.pinned_since = start
        ready = self._load(gpu, request, now)
        end = ready + request.output_tokens * self._decode_time(request, gpu.slots_used)
        job.emitted = float(request.output_tokens)
        self.recorder.verified(end, float(request.output_tokens))
        self.queue.push(end, EventKind.REQUEST_DONE, request.id)

    # -- loop ------------------------------------------------------------------

    def _finish(self, job: _Job, now: float):
        request = job.request

        if job.remote is not None:
            job.remote.slots_used -= 1
            job.remote.hold(job.resident_since, now, request.kv_compressed_bytes)

        if job.pinned is not None:
            job.pinned.slots_used -= 1
            job.pinned.hold(job.pinned_since, now, request.kv_full_bytes)

        self.recorder.finish_request(request.id, now - request.arrival)

    def run(self) -> SimMetrics:
        M = self.config.model.weights_bytes

        _logger.info(
            "Simulating %s remote-prefix requests, schedule=%s, G_L=%s, G_R=%s",
            len(self.workload),
            self.schedule.value,
            len(self.local),
            len(self.remote),
        )

        for request in self.workload:
            self.jobs[request.id] = _Job(request=request)
            self.queue.push(request.arrival, EventKind.REQUEST_ARRIVAL, request.id)

        while self.queue:
            event = self.queue.pop()
            job = self.jobs[event.request_id]

            if event.kind == EventKind.REQUEST_ARRIVAL:
                self.waiting.append(event.request_id)
                self._dispatch(event.time)
            elif event.kind == EventKind.TRANSFER_COMPLETE:
                self._start_cycle(job, event.time)
            elif event.kind == EventKind.VERIFY_COMPLETE:
                self._on_verify(job, event.time)
            elif event.kind == EventKind.REQUEST_DONE:
                self._finish(job, event.time)
                self._dispatch(event.time)

        if self.waiting:
            _logger.warning("%s requests never found a free slot", len(self.waiting))
            self.recorder.feasible = False

        for gpu in self.local + self.remote:
            self.recorder.observe_hbm(M + gpu.peak_kv())

        return self.recorder.build(len(self.workload))


def simulate_remote_prefix(
    config: SystemConfig,
    workload: List[Request],
    seed: Optional[int] = None,
) -> SimMetrics:
    return RemotePrefixSimulator(config, workload, Schedule.STAGGERED, seed).run()


def baseline_remote_prefix(
    config: SystemConfig,
    workload: List[Request],
    seed: Optional[int] = None,
) -> SimMetrics:
    return RemotePrefixSimulator(config, workload, Schedule.FULL_KV_BASELINE, seed).run()
