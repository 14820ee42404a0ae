import dataclasses
import heapq
import itertools
import logging
from typing import Any, List, Optional

from kvspec.enums import EventKind

_logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class SimEvent:
    time: float
    kind: EventKind
    request_id: int = -1
    payload: Any = None


class EventQueue:
    """Time-ordered events; ties break on kind order, then request id, then push order."""

    def __init__(self):
        self._heap: List[tuple] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def push(
        self, time: float, kind: EventKind, request_id: int = -1, payload: Any = None
    ) -> SimEvent:
        if time < 0:
            raise ValueError("event time must be >= 0")

        event = SimEvent(time=time, kind=kind, request_id=request_id, payload=payload)
        heapq.heappush(
            self._heap, (time, kind.order, request_id, next(self._seq), event)
        )
        return event

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)[-1]

    def peek(self) -> Optional[SimEvent]:
        return self._heap[0][-1] if self._heap else None
