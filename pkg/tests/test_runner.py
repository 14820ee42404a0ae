import pytest

from kvspec.core.models import Request
from kvspec.core.workload import workload_from_config
from kvspec.enums import Schedule
from kvspec.exceptions import ContractError
from kvspec.sim.models import CSV_COLUMNS
from kvspec.sim.runner import (
    LONG_CONTEXT_SCHEDULES,
    compare_schedules,
    compress_workload,
    simulate,
)
from tests.utils import (
    KV_COMP,
    KV_FULL,
    WEIGHTS,
    long_context_config,
    remote_prefix_config,
)


def test_compare_schedules_shares_one_workload():
    config = long_context_config(scenario={"batch_size": 4})
    frame, results = compare_schedules(config, workload_from_config(config))

    assert frame.columns == CSV_COLUMNS
    assert frame["schedule"].to_list() == [s.value for s in LONG_CONTEXT_SCHEDULES]
    assert frame["B"].to_list() == [4] * len(LONG_CONTEXT_SCHEDULES)
    assert [m.schedule for m in results] == list(LONG_CONTEXT_SCHEDULES)
    assert len({m.tokens_emitted for m in results}) == 1


def test_compare_needs_long_context():
    config = remote_prefix_config()

    with pytest.raises(ContractError):
        compare_schedules(config, workload_from_config(config))


def test_simulate_dispatches_by_scenario():
    config = remote_prefix_config()
    workload = workload_from_config(config)

    assert simulate(config, workload).schedule == Schedule.STAGGERED
    assert simulate(config, workload, Schedule.FULL_KV_BASELINE).latencies == [pytest.approx(0.52)]


_QUANT = {"kind": "quant-uniform", "mode": "offline", "bits": 4}
_WINDOW = {"kind": "drop-window", "mode": "online", "ratio": 0.25, "window": 500}


def _compressed_config(compressor):
    # 4 GB at 1 MB per token: 4000 whole tokens per request
    return long_context_config(model={"kv_bytes_per_token": 1_000_000}, compressor=compressor)


def test_compressor_sets_the_drafter_payload():
    quant = _compressed_config(_QUANT)
    window = _compressed_config(_WINDOW)
    workload = workload_from_config(quant)

    assert [r.kv_compressed_bytes for r in compress_workload(quant, workload)] == [KV_COMP] * 10
    # the window keeps 500 of 4000 tokens, below the 0.25 ratio
    assert [r.kv_compressed_bytes for r in compress_workload(window, workload)] == [
        500_000_000
    ] * 10
    assert compress_workload(long_context_config(), workload) == workload


def test_compressor_payload_reaches_the_simulator():
    quant = _compressed_config(_QUANT)
    window = _compressed_config(_WINDOW)
    workload = workload_from_config(quant)

    quant_run = simulate(quant, workload, Schedule.SEQUENTIAL_VERIFY)
    window_run = simulate(window, workload, Schedule.SEQUENTIAL_VERIFY)

    # every compressed cache stays resident while one full cache is reloaded
    assert quant_run.peak_hbm == WEIGHTS + 10 * KV_COMP + KV_FULL
    assert window_run.peak_hbm == WEIGHTS + 10 * 500_000_000 + KV_FULL
    assert quant_run.tokens_emitted == window_run.tokens_emitted


def test_uniform_drop_payload_follows_each_request_ratio():
    config = _compressed_config({"kind": "drop-uniform", "mode": "offline", "ratio": 0.25})
    workload = [
        Request(id=0, kv_full_bytes=KV_FULL, compression_ratio=0.25, output_tokens=10),
        Request(id=1, kv_full_bytes=KV_FULL, compression_ratio=0.5, output_tokens=10),
        Request(id=2, kv_full_bytes=KV_FULL, compression_ratio=1.0, output_tokens=10),
    ]

    compressed = compress_workload(config, workload, seed=3)

    assert [r.kv_compressed_bytes for r in compressed] == [KV_COMP, 2 * KV_COMP, KV_FULL]
    assert compressed[2].compressed_bytes is None
