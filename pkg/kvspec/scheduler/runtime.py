"""
Per-iteration execution loop over the lookahead rings.

Each step (i) reports reloads whose span starts now, (ii) verifies the
sessions whose verify window is now and drafts for the rest, and (iii)
slides the rings and re-admits.
"""

import collections
import logging
import math
from typing import Callable, Collection, Deque, Dict, Hashable, Iterable, List, Optional

from kvspec.analytics.intra import t_iter_batch
from kvspec.config import Settings, get_settings
from kvspec.core.models import Request, SystemConfig
from kvspec.enums import IterationTimeMode, SessionMode
from kvspec.exceptions import ContractError
from kvspec.scheduler.models import Reservation, ReserveRings, SpecSession, StepOutcome
from kvspec.scheduler.rings import admit, advance, check_rings, release, reservation_mass

_logger = logging.getLogger(__name__)

_MASS_TOL = 1e-9

VerifyCallback = Callable[[SpecSession, int], float]


def _perfect_acceptance(session: SpecSession, drafted: int) -> float:
    return drafted + 1


class SchedulerRuntime:
    def __init__(
        self,
        config: SystemConfig,
        bandwidth: Optional[float] = None,
        settings: Optional[Settings] = None,
    ):
        settings = settings or get_settings()
        hw = config.hardware

        self.config = config
        self.draft_length = config.draft_length
        self.safety_checks = settings.ring_safety_checks
        self.sessions: Dict[Hashable, SpecSession] = {}
        self.waiting: Deque[Hashable] = collections.deque()
        self.stalled: Dict[Hashable, SpecSession] = {}
        self.iteration = 0

        self.rings = ReserveRings(
            window=config.lookahead_window,
            iteration_time=self._iteration_time_for([]),
            hbm_capacity=hw.gpu_mem,
            weights_bytes=config.model.weights_bytes,
            bandwidth=bandwidth or hw.interconnect_bandwidth,
        )

    @property
    def active(self) -> bool:
        return bool(self.sessions)

    def _iteration_time_for(self, requests: Iterable[Request]) -> float:
        if self.config.iteration_time_mode == IterationTimeMode.FIXED:
            return self.config.runtime.fixed_iteration_time

        hw = self.config.hardware

        return (
            t_iter_batch(
                weights_bytes=self.config.model.weights_bytes,
                requests=list(requests),
                x=self.draft_length,
                bw_hbm=hw.hbm_bandwidth,
                bw_inter=hw.interconnect_bandwidth,
            )
            + self.config.iteration_overhead
        )

    def refresh_iteration_time(self):
        """Recompute T_iter from the current batch, never below a reserved window."""

        target = self._iteration_time_for(s.request for s in self.sessions.values())
        floor = float(self.rings.bw_ring.max()) if self.rings.reservations else 0.0
        self.rings.iteration_time = max(target, floor)

    def _resident_bytes(self, request: Request) -> int:
        return request.kv_compressed_bytes if request.speculating else request.kv_full_bytes

    def _make_resident(self, session: SpecSession) -> bool:
        if session.resident:
            return True

        needed = self._resident_bytes(session.request)

        if self.rings.hbm_headroom < needed or self.rings.hbm_headroom - needed < int(
            self.rings.hbm_ring.max()
        ):
            return False

        self.rings.kv_resident += needed
        session.resident = True
        return True

    def _try_start(self, session: SpecSession) -> Optional[Reservation]:
        if not self._make_resident(session):
            session.mode = SessionMode.WAITING
            return None

        if not session.request.speculating:
            session.mode = SessionMode.NON_SPECULATING
            return None

        reservation = admit(session.request, self.rings, self.draft_length)
        self._checked()

        if reservation is None:
            session.mode = SessionMode.WAITING
            return None

        session.mode = SessionMode.SPECULATIVE
        session.pending_reservation = reservation
        return reservation

    def add_requests(self, requests: Iterable[Request]) -> List[Reservation]:
        """Register arrivals, then try to start each one in order."""

        new_sessions = []

        for request in requests:
            if request.id in self.sessions:
                raise ContractError(f"request {request.id} already registered")

            session = SpecSession(request=request, mode=SessionMode.WAITING)
            self.sessions[request.id] = session
            new_sessions.append(session)

        self.refresh_iteration_time()
        admitted = []

        for session in new_sessions:
            reservation = self._try_start(session)

            if reservation is not None:
                admitted.append(reservation)
            elif session.mode == SessionMode.WAITING:
                self.waiting.append(session.request_id)

        _logger.debug(
            "Added %s requests, %s admitted, %s waiting (T_iter=%.6f)",
            len(new_sessions),
            len(admitted),
            len(self.waiting),
            self.rings.iteration_time,
        )

        return admitted

    def _finish(self, session: SpecSession, outcome: StepOutcome):
        if session.resident:
            self.rings.kv_resident -= self._resident_bytes(session.request)
            session.resident = False

        del self.sessions[session.request_id]
        outcome.completed.append(session.request_id)

    def _credit(self, session: SpecSession, tokens: float, outcome: StepOutcome):
        credited = min(tokens, session.remaining)

        if tokens >= session.remaining:
            session.tokens_emitted = float(session.request.output_tokens)
        else:
            session.tokens_emitted += credited

        outcome.tokens += credited

    def _verify(
        self,
        session: SpecSession,
        on_verify: VerifyCallback,
        outcome: StepOutcome,
    ):
        reservation = session.pending_reservation
        self._credit(session, on_verify(session, session.drafted), outcome)
        outcome.verified_sessions.append(session.request_id)

        if reservation is not None:
            outcome.verifies.append(reservation)

        session.drafted = 0
        session.rounds += 1
        session.pending_reservation = None

    def _hbm_read_bytes(self, outcome: StepOutcome) -> int:
        total = self.config.model.weights_bytes

        for request_id in outcome.drafting:
            total += self.sessions[request_id].request.kv_compressed_bytes

        for request_id in outcome.verified_sessions:
            total += self.sessions[request_id].request.kv_full_bytes

        for request_id in outcome.decoding:
            total += self.sessions[request_id].request.kv_full_bytes

        return total

    def execution_step(
        self,
        on_verify: Optional[VerifyCallback] = None,
        completed_transfers: Optional[Collection[Hashable]] = None,
    ) -> StepOutcome:
        """Run one iteration; `completed_transfers=None` means every reload landed on time."""

        on_verify = on_verify or _perfect_acceptance
        rings = self.rings
        outcome = StepOutcome(iteration=self.iteration)
        outcome.iteration_time = rings.iteration_time
        outcome.link_time = float(rings.bw_ring[0])
        outcome.inflight_bytes = int(rings.hbm_ring[0])
        outcome.peak_hbm = rings.weights_bytes + rings.kv_resident + outcome.inflight_bytes

        # (i) reloads starting in this window
        outcome.reload_starts = [
            res for res in rings.reservations.values() if res.span_start == 0
        ]

        # (ii) verify, draft or decode
        for request_id, session in list(self.stalled.items()):
            if completed_transfers is None or request_id in completed_transfers:
                del self.stalled[request_id]
                self._verify(session, on_verify, outcome)

        for session in self.sessions.values():
            if session.request_id in outcome.verified_sessions:
                continue

            if session.mode == SessionMode.NON_SPECULATING:
                outcome.decoding.append(session.request_id)
                self._credit(session, 1.0, outcome)
            elif session.mode == SessionMode.SPECULATIVE:
                reservation = session.pending_reservation

                if reservation is None:
                    # stalled behind a late reload
                    continue

                if reservation.verify_iteration == 0:
                    if completed_transfers is not None and session.request_id not in (
                        completed_transfers
                    ):
                        continue

                    release(reservation, rings)
                    self._checked()
                    self._verify(session, on_verify, outcome)
                else:
                    session.drafted += 1
                    outcome.drafting.append(session.request_id)

        outcome.hbm_read_bytes = self._hbm_read_bytes(outcome)

        # (iii) slide, retire finished sessions, re-admit
        advanced = advance(rings, completed_transfers)
        self._checked()

        for reservation in advanced.late:
            session = self.sessions[reservation.request_id]
            session.pending_reservation = None
            self.stalled[reservation.request_id] = session
            outcome.late.append(reservation)

        for request_id, session in list(self.sessions.items()):
            if session.remaining <= 0:
                self._finish(session, outcome)

        self.refresh_iteration_time()
        self._readmit(outcome)

        self.iteration += 1
        outcome.kv_resident = rings.kv_resident
        return outcome

    def _readmit(self, outcome: StepOutcome):
        for _ in range(len(self.waiting)):
            request_id = self.waiting.popleft()
            session = self.sessions.get(request_id)

            if session is None:
                continue

            reservation = self._try_start(session)

            if reservation is not None:
                outcome.readmissions.append(reservation)
            elif session.mode == SessionMode.WAITING:
                self.waiting.append(request_id)

        for request_id in outcome.verified_sessions:
            session = self.sessions.get(request_id)

            if session is None:
                continue

            reservation = self._try_start(session)

            if reservation is not None:
                outcome.readmissions.append(reservation)
            elif session.mode == SessionMode.WAITING:
                _logger.debug("Request %s back to the waiting queue", request_id)
                self.waiting.append(request_id)

    def _checked(self):
        if not self.safety_checks:
            return

        check_rings(self.rings)
        applied, expected = reservation_mass(self.rings)

        if not math.isclose(applied, expected, rel_tol=_MASS_TOL, abs_tol=1e-15):
            raise ContractError(
                f"reservation mass leak: applied {applied} != reserved {expected}"
            )

    def run(
        self,
        max_steps: int,
        on_verify: Optional[VerifyCallback] = None,
    ) -> List[StepOutcome]:
        outcomes = []

        for _ in range(max_steps):
            if not self.active:
                break
            outcomes.append(self.execution_step(on_verify))

        return outcomes
