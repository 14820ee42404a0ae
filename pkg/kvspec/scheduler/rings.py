"""
Lookahead resource rings and the reservation primitives driving them.

Ring contents are always the sum of the live reservations, applied in
insertion order, so releasing a reservation restores the exact values the
rings held without it.
"""

import dataclasses
import logging
import math
from typing import Callable, Collection, Hashable, Iterator, List, Optional, Tuple

from kvspec.core.models import Request
from kvspec.exceptions import ContractError
from kvspec.scheduler.models import Reservation, ReserveRings

_logger = logging.getLogger(__name__)

_REL_TOL = 1e-12

FeasibilityProbe = Callable[[int, bool], None]


@dataclasses.dataclass
class AdvanceResult:
    handed_off: List[Reservation] = dataclasses.field(default_factory=list)
    late: List[Reservation] = dataclasses.field(default_factory=list)


def reload_span(
    kv_full_bytes: float, bandwidth: float, iteration_time: float
) -> Tuple[float, int]:
    if kv_full_bytes <= 0 or bandwidth <= 0 or iteration_time <= 0:
        raise ValueError("reload_span inputs must be > 0")

    load_ratio = kv_full_bytes / (bandwidth * iteration_time)
    return load_ratio, max(1, math.ceil(load_ratio))


def candidate_windows(anchor: int, lo: int, hi: int) -> Iterator[int]:
    """anchor, anchor-1, anchor+1, anchor-2, ... restricted to [lo, hi]."""

    if lo > hi:
        return

    yield anchor

    for k in range(1, max(anchor - lo, hi - anchor) + 1):
        for cand in (anchor - k, anchor + k):
            if lo <= cand <= hi:
                yield cand


def _recompute(rings: ReserveRings):
    rings.bw_ring[:] = 0.0
    rings.hbm_ring[:] = 0

    for res in rings.reservations.values():
        lo = max(res.span_start, 0)
        hi = min(res.verify_iteration, rings.window - 1)

        if lo <= hi:
            rings.bw_ring[lo : hi + 1] += res.per_window_bw
            rings.hbm_ring[lo : hi + 1] += res.bytes


def _fits(rings: ReserveRings, res: Reservation) -> bool:
    span = slice(res.span_start, res.verify_iteration + 1)
    bw_cap = rings.iteration_time * (1.0 + _REL_TOL)

    if (rings.bw_ring[span] + res.per_window_bw > bw_cap).any():
        return False

    hbm_used = rings.weights_bytes + rings.kv_resident + rings.hbm_ring[span] + res.bytes
    return not (hbm_used > rings.hbm_capacity).any()


def reserve(rings: ReserveRings, res: Reservation):
    """Apply a reservation as given, without searching for a window."""

    if res.request_id in rings.reservations:
        raise ContractError(f"request {res.request_id} already holds a reservation")

    if res.span_start < 0 or res.verify_iteration >= rings.window:
        raise ContractError(f"span {res.span} outside the lookahead window")

    rings.reservations[res.request_id] = res
    _recompute(rings)


def plan_reservation(request: Request, rings: ReserveRings, d_r: int) -> Reservation:
    load_ratio, span_len = reload_span(
        request.kv_full_bytes, rings.bandwidth, rings.iteration_time
    )

    return Reservation(
        request_id=request.id,
        verify_iteration=d_r,
        span_len=span_len,
        per_window_bw=(request.kv_full_bytes / rings.bandwidth) / span_len,
        bytes=request.kv_full_bytes,
        load_ratio=load_ratio,
    )


def admit(
    request: Request,
    rings: ReserveRings,
    anchor_x: int,
    probe: Optional[FeasibilityProbe] = None,
) -> Optional[Reservation]:
    """Reserve the first feasible verify window around the anchor.

    Returns None when no window fits; the rings are then left untouched and
    the caller keeps the request waiting.
    """

    if anchor_x < 1:
        raise ContractError("anchor_x must be >= 1")

    _, span_len = reload_span(
        request.kv_full_bytes, rings.bandwidth, rings.iteration_time
    )

    lo, hi = span_len, rings.window - 1
    anchor = min(max(anchor_x, lo), hi)

    for d_r in candidate_windows(anchor, lo, hi):
        res = plan_reservation(request, rings, d_r)
        feasible = _fits(rings, res)

        if probe is not None:
            probe(d_r, feasible)

        if feasible:
            reserve(rings, res)
            _logger.debug(
                "Admitted request %s at d_r=%s (S_r=%s, anchor=%s)",
                request.id,
                d_r,
                span_len,
                anchor,
            )
            return res

    _logger.debug("No feasible window for request %s (S_r=%s)", request.id, span_len)
    return None


def release(reservation: Reservation, rings: ReserveRings):
    held = rings.reservations.get(reservation.request_id)

    if held is None or held != reservation:
        raise ContractError(
            f"release of unknown reservation for request {reservation.request_id}"
        )

    del rings.reservations[reservation.request_id]
    _recompute(rings)


def advance(rings: ReserveRings, completed: Optional[Collection[Hashable]] = None) -> AdvanceResult:
    """Retire window 0 and shift every reservation one window earlier.

    Reservations verifying in the retired window leave the rings: those whose
    transfer completed are handed off, the others are reported late.
    `completed=None` treats every transfer as complete.
    """

    result = AdvanceResult()
    shifted = {}

    for request_id, res in rings.reservations.items():
        if res.verify_iteration <= 0:
            if completed is None or request_id in completed:
                result.handed_off.append(res)
            else:
                _logger.warning("Late transfer for request %s", request_id)
                result.late.append(res)
        else:
            shifted[request_id] = res.shifted()

    rings.reservations = shifted
    _recompute(rings)
    return result


def check_rings(rings: ReserveRings):
    """Raise ContractError if any window breaks either ring constraint."""

    bw_cap = rings.iteration_time * (1.0 + _REL_TOL)
    over_bw = rings.bw_ring > bw_cap

    if over_bw.any():
        idx = int(over_bw.argmax())
        raise ContractError(
            f"bw ring window {idx}: {rings.bw_ring[idx]} > {rings.iteration_time}"
        )

    hbm = rings.weights_bytes + rings.kv_resident + rings.hbm_ring
    over_hbm = hbm > rings.hbm_capacity

    if over_hbm.any():
        idx = int(over_hbm.argmax())
        raise ContractError(
            f"hbm ring window {idx}: {int(hbm[idx])} > {rings.hbm_capacity}"
        )


def reservation_mass(rings: ReserveRings) -> Tuple[float, float]:
    """(applied interconnect time incl. retired span windows, sum of l_r * T_iter)."""

    applied = math.fsum(rings.bw_ring)
    applied += math.fsum(
        res.per_window_bw * max(0, -res.span_start)
        for res in rings.reservations.values()
    )
    expected = math.fsum(res.transfer_time for res in rings.reservations.values())
    return applied, expected
