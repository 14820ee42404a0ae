import dataclasses
import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from kvspec.enums import Scenario, Schedule

_logger = logging.getLogger(__name__)

WARM_TRIM = 0.1

CSV_COLUMNS = [
    "schedule",
    "B",
    "x",
    "c",
    "throughput_tok_s",
    "p50_latency_s",
    "p99_latency_s",
    "peak_hbm_bytes",
    "interconnect_busy",
]


@dataclasses.dataclass
class SimMetrics:
    """Outcome of one simulation run; throughput is tokens_emitted / sim_time."""

    schedule: Schedule
    scenario: Scenario
    batch_size: int
    draft_length: int
    compression_ratio: float
    tokens_emitted: float
    sim_time: float
    throughput: float
    latencies: List[float]
    p50_latency: Optional[float]
    p99_latency: Optional[float]
    completed_requests: int
    peak_hbm: int
    hbm_capacity: int
    hbm_excess_bytes: int
    interconnect_busy_s: float
    interconnect_busy_fraction: float
    max_transfer_burst_s: float
    transfer_per_cycle_s: float
    stall_s: float
    cycles: float
    iterations: int
    verify_counts: List[int]
    late_transfers: int
    warm_throughput: Optional[float]
    feasible: bool

    def csv_row(self) -> Dict:
        return {
            "schedule": self.schedule.value,
            "B": self.batch_size,
            "x": self.draft_length,
            "c": self.compression_ratio,
            "throughput_tok_s": self.throughput,
            "p50_latency_s": self.p50_latency,
            "p99_latency_s": self.p99_latency,
            "peak_hbm_bytes": self.peak_hbm,
            "interconnect_busy": self.interconnect_busy_fraction,
        }

    def summary(self) -> Dict:
        """Report view without the per-request and per-iteration lists."""

        doc = dataclasses.asdict(self)
        doc.pop("latencies")
        doc.pop("verify_counts")
        return doc


def warm_rate(times: np.ndarray, cumulative: np.ndarray, trim: float = WARM_TRIM) -> Optional[float]:
    """Least-squares slope of cumulative tokens over the middle of the run."""

    if times.size < 2:
        return None

    lo, hi = trim * times[-1], (1.0 - trim) * times[-1]
    inside = (times >= lo) & (times <= hi)

    if np.count_nonzero(inside) < 2:
        return None

    slope, _ = np.polyfit(times[inside], cumulative[inside], 1)
    return float(slope)


def _percentile(values: List[float], q: float) -> Optional[float]:
    return float(np.percentile(values, q)) if values else None


@dataclasses.dataclass
class MetricsRecorder:
    """Accumulates per-iteration and per-request observations of one run."""

    schedule: Schedule
    scenario: Scenario
    hbm_capacity: int
    batch_size: int
    draft_length: int
    compression_ratio: float
    links: int = 1
    tokens: float = 0.0
    now: float = 0.0
    iterations: int = 0
    peak_hbm: int = 0
    link_busy: float = 0.0
    stall: float = 0.0
    max_burst: float = 0.0
    verifies: int = 0
    late: int = 0
    feasible: bool = True
    verify_counts: List[int] = dataclasses.field(default_factory=list)
    latencies: Dict[int, float] = dataclasses.field(default_factory=dict)
    _points: List[Tuple[float, float]] = dataclasses.field(default_factory=list)
    _burst: float = 0.0

    def observe_hbm(self, nbytes: int):
        self.peak_hbm = max(self.peak_hbm, int(nbytes))

    def iteration(
        self,
        wall: float,
        tokens: float,
        verifies: int = 0,
        link_time: float = 0.0,
        stall: float = 0.0,
    ):
        """Close one GPU iteration of `wall` seconds starting at `now`."""

        self.iterations += 1
        self.verify_counts.append(verifies)
        self.verifies += verifies
        self.stall += stall
        self.transfer(link_time, saturated=link_time >= wall * (1.0 - 1e-9))
        self.now += wall
        self.tokens += tokens
        self._points.append((self.now, self.tokens))

    def transfer(self, seconds: float, saturated: bool = False):
        """Link activity; a busy stretch continues only while the link stays saturated."""

        if seconds <= 0:
            self._burst = 0.0
            return

        self.link_busy += seconds
        self._burst += seconds
        self.max_burst = max(self.max_burst, self._burst)

        if not saturated:
            self._burst = 0.0

    def exposed_transfer(self, seconds: float):
        """A reload the GPU waits on; the link stays saturated for its duration."""

        self.transfer(seconds, saturated=True)
        self.stall += seconds
        self.now += seconds

    def idle_until(self, time: float):
        if time > self.now:
            self.now = time
            self._burst = 0.0

    def emit(self, time: float, tokens: float):
        """Tokens emitted at an instant, for pipelines without a shared iteration clock."""

        self.now = max(self.now, time)
        self.tokens += tokens
        self._points.append((time, self.tokens))

    def verified(self, time: float, tokens: float):
        self.verifies += 1
        self.iterations += 1
        self.verify_counts.append(1)
        self.emit(time, tokens)

    def finish_request(self, request_id: int, latency: float):
        self.latencies[request_id] = latency

    def build(self, requests: int) -> SimMetrics:
        sim_time = self.now
        latencies = [self.latencies[k] for k in sorted(self.latencies)]
        points = sorted(self._points)
        times = np.array([p[0] for p in points], dtype=np.float64)
        cumulative = np.array([p[1] for p in points], dtype=np.float64)
        cycles = self.verifies / requests if requests else 0.0

        if self.hbm_capacity and self.peak_hbm > self.hbm_capacity:
            _logger.warning(
                "%s peak HBM %s exceeds capacity %s",
                self.schedule.value,
                self.peak_hbm,
                self.hbm_capacity,
            )

        return SimMetrics(
            schedule=self.schedule,
            scenario=self.scenario,
            batch_size=self.batch_size,
            draft_length=self.draft_length,
            compression_ratio=self.compression_ratio,
            tokens_emitted=self.tokens,
            sim_time=sim_time,
            throughput=self.tokens / sim_time if sim_time > 0 else 0.0,
            latencies=latencies,
            p50_latency=_percentile(latencies, 50),
            p99_latency=_percentile(latencies, 99),
            completed_requests=len(latencies),
            peak_hbm=self.peak_hbm,
            hbm_capacity=self.hbm_capacity,
            hbm_excess_bytes=max(0, self.peak_hbm - self.hbm_capacity),
            interconnect_busy_s=self.link_busy,
            interconnect_busy_fraction=(
                min(1.0, self.link_busy / (sim_time * self.links)) if sim_time > 0 else 0.0
            ),
            max_transfer_burst_s=self.max_burst,
            transfer_per_cycle_s=self.link_busy / cycles if cycles > 0 else 0.0,
            stall_s=self.stall,
            cycles=cycles,
            iterations=self.iterations,
            verify_counts=self.verify_counts,
            late_transfers=self.late,
            warm_throughput=warm_rate(times, cumulative),
            feasible=self.feasible and not math.isnan(self.tokens),
        )
