import logging

import pytest

from kvspec.core.models import Request
from kvspec.exceptions import ContractError
from kvspec.scheduler.models import Reservation, ReserveRings
from kvspec.scheduler.rings import (
    admit,
    advance,
    candidate_windows,
    check_rings,
    plan_reservation,
    release,
    reload_span,
    reservation_mass,
    reserve,
)
from tests.utils import GB, WEIGHTS

_logger = logging.getLogger(__name__)

_T_ITER = 0.5
_BANDWIDTH = 2e9


def _rings(window: int = 64, hbm_capacity: int = 100 * GB) -> ReserveRings:
    return ReserveRings(
        window=window,
        iteration_time=_T_ITER,
        hbm_capacity=hbm_capacity,
        weights_bytes=WEIGHTS,
        bandwidth=_BANDWIDTH,
    )


def _request(rid: int, kv_full: int = GB) -> Request:
    return Request(
        id=rid, arrival=0.0, kv_full_bytes=kv_full, compression_ratio=0.25, output_tokens=10
    )


def test_reload_span():
    load_ratio, span = reload_span(4e9, 5e10, 0.037)
    assert load_ratio == pytest.approx(2.162, abs=1e-3)
    assert span == 3

    assert reload_span(2.5e10, 5e10, 0.5) == (1.0, 1)
    assert reload_span(1.0, 5e10, 0.5)[1] == 1

    with pytest.raises(ValueError):
        reload_span(0, 5e10, 0.5)


def test_candidate_windows_order():
    assert list(candidate_windows(5, 1, 7)) == [5, 4, 6, 3, 7, 2, 1]
    assert list(candidate_windows(1, 1, 3)) == [1, 2, 3]
    assert list(candidate_windows(3, 4, 2)) == []


def test_admit_at_anchor_on_empty_rings():
    rings = _rings()
    res = admit(_request(0), rings, anchor_x=25)

    assert res.verify_iteration == 25
    assert res.span_len == 1
    assert rings.bw_ring[25] == pytest.approx(_T_ITER)
    assert rings.hbm_ring[25] == GB
    assert rings.bw_ring.sum() == pytest.approx(_T_ITER)


def test_admit_searches_around_a_blocker():
    rings = _rings()
    blocker = Reservation(
        request_id="blocker",
        verify_iteration=27,
        span_len=5,
        per_window_bw=_T_ITER,
        bytes=GB,
        load_ratio=5.0,
    )
    reserve(rings, blocker)

    probes = []
    res = admit(_request(0), rings, anchor_x=25, probe=lambda d_r, ok: probes.append((d_r, ok)))

    assert res.verify_iteration == 22
    assert [d for d, _ in probes] == [25, 24, 26, 23, 27, 22]
    assert [ok for _, ok in probes] == [False] * 5 + [True]


def test_admit_clamps_the_anchor():
    rings = _rings(window=8)
    res = admit(_request(0), rings, anchor_x=100)
    assert res.verify_iteration == 7

    rings = _rings()
    # 3 GB over a 1 GB-per-window link needs three windows
    res = admit(_request(1, kv_full=3 * GB), rings, anchor_x=1)
    assert res.span_len == 3
    assert res.verify_iteration == 3
    assert list(res.span) == [1, 2, 3]


def test_admit_without_headroom_leaves_rings_untouched():
    rings = _rings(hbm_capacity=WEIGHTS)
    before = rings.snapshot()

    assert admit(_request(0), rings, anchor_x=25) is None
    assert rings.snapshot() == before


def test_admit_rejects_bad_anchor():
    with pytest.raises(ContractError):
        admit(_request(0), _rings(), anchor_x=0)


def test_reserve_contract():
    rings = _rings(window=8)
    res = plan_reservation(_request(0), rings, 3)
    reserve(rings, res)

    with pytest.raises(ContractError):
        reserve(rings, res)

    with pytest.raises(ContractError):
        reserve(rings, plan_reservation(_request(1), rings, 8))


def test_release_restores_rings():
    rings = _rings()
    first = admit(_request(0), rings, anchor_x=10)
    before = rings.snapshot()

    second = admit(_request(1), rings, anchor_x=10)
    assert second.verify_iteration == 9

    release(second, rings)
    assert rings.snapshot() == before

    with pytest.raises(ContractError):
        release(second, rings)

    release(first, rings)
    assert not rings.bw_ring.any()
    assert not rings.hbm_ring.any()


def test_advance_hands_off_and_shifts():
    rings = _rings(window=8)
    near = admit(_request(0), rings, anchor_x=1)
    far = admit(_request(1), rings, anchor_x=4)

    result = advance(rings)
    assert result.handed_off == [] and result.late == []
    assert rings.reservations[0].verify_iteration == 0
    assert rings.reservations[1].verify_iteration == 3

    result = advance(rings)
    assert result.handed_off == [near.shifted()]
    assert set(rings.reservations) == {1}
    assert rings.reservations[1] == far.shifted(-2)


def test_advance_reports_late_transfers():
    rings = _rings(window=8)
    admit(_request(0), rings, anchor_x=1)
    advance(rings)

    result = advance(rings, completed=set())

    assert [r.request_id for r in result.late] == [0]
    assert rings.reservations == {}


def test_reservation_mass_survives_advances():
    rings = _rings()

    for rid in range(5):
        admit(_request(rid, kv_full=3 * GB), rings, anchor_x=6)

    for _ in range(4):
        advance(rings)
        applied, expected = reservation_mass(rings)
        assert applied == pytest.approx(expected, rel=1e-12)
        check_rings(rings)


def test_check_rings_flags_overcommit():
    rings = _rings()
    check_rings(rings)

    rings.bw_ring[3] = 2 * _T_ITER
    with pytest.raises(ContractError, match="bw ring window 3"):
        check_rings(rings)

    rings = _rings()
    rings.hbm_ring[5] = 60 * GB
    with pytest.raises(ContractError, match="hbm ring window 5"):
        check_rings(rings)
