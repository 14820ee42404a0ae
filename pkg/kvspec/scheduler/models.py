import dataclasses
import logging
from typing import Dict, Hashable, List, Optional

import numpy as np

from kvspec.core.models import Request
from kvspec.enums import SessionMode

_logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class Reservation:
    """A verify reload pinned to lookahead window `verify_iteration` (d_r).

    Window indices are relative to the rings' current iteration.
    """

    request_id: Hashable
    verify_iteration: int
    span_len: int
    per_window_bw: float
    bytes: int
    load_ratio: float

    @property
    def span_start(self) -> int:
        return self.verify_iteration - self.span_len + 1

    @property
    def span(self) -> range:
        return range(self.span_start, self.verify_iteration + 1)

    @property
    def transfer_time(self) -> float:
        return self.per_window_bw * self.span_len

    def shifted(self, by: int = -1) -> "Reservation":
        return dataclasses.replace(self, verify_iteration=self.verify_iteration + by)


@dataclasses.dataclass
class ReserveRings:
    """Interconnect-time ring T[i] and in-flight-bytes ring B[i] over W windows."""

    window: int
    iteration_time: float
    hbm_capacity: int
    weights_bytes: int
    bandwidth: float
    kv_resident: int = 0
    tokens: float = 0.0
    bw_ring: np.ndarray = dataclasses.field(init=False, repr=False)
    hbm_ring: np.ndarray = dataclasses.field(init=False, repr=False)
    reservations: Dict[Hashable, Reservation] = dataclasses.field(
        default_factory=dict, repr=False
    )

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("lookahead window must be >= 2")

        if self.iteration_time <= 0 or self.bandwidth <= 0:
            raise ValueError("iteration_time and bandwidth must be > 0")

        self.bw_ring = np.zeros(self.window, dtype=np.float64)
        self.hbm_ring = np.zeros(self.window, dtype=np.int64)

    @property
    def hbm_headroom(self) -> int:
        return self.hbm_capacity - self.weights_bytes - self.kv_resident

    def snapshot(self) -> tuple:
        return (
            self.bw_ring.tobytes(),
            self.hbm_ring.tobytes(),
            self.kv_resident,
            tuple(self.reservations.items()),
        )


@dataclasses.dataclass
class SpecSession:
    request: Request
    mode: SessionMode
    tokens_emitted: float = 0.0
    pending_reservation: Optional[Reservation] = None
    drafted: int = 0
    resident: bool = False
    rounds: int = 0

    @property
    def request_id(self) -> Hashable:
        return self.request.id

    @property
    def remaining(self) -> float:
        return self.request.output_tokens - self.tokens_emitted


@dataclasses.dataclass
class StepOutcome:
    """What one execution step did, in iteration-relative terms."""

    iteration: int
    reload_starts: List[Reservation] = dataclasses.field(default_factory=list)
    drafting: List[Hashable] = dataclasses.field(default_factory=list)
    verifies: List[Reservation] = dataclasses.field(default_factory=list)
    decoding: List[Hashable] = dataclasses.field(default_factory=list)
    verified_sessions: List[Hashable] = dataclasses.field(default_factory=list)
    readmissions: List[Reservation] = dataclasses.field(default_factory=list)
    late: List[Reservation] = dataclasses.field(default_factory=list)
    completed: List[Hashable] = dataclasses.field(default_factory=list)
    iteration_time: float = 0.0
    link_time: float = 0.0
    inflight_bytes: int = 0
    peak_hbm: int = 0
    hbm_read_bytes: int = 0
    kv_resident: int = 0
    tokens: float = 0.0
