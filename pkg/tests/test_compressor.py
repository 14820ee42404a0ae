import numpy as np
import orjson
import pytest
from pydantic import ValidationError

from kvspec.compressor.compressors import (
    QuantCompressor,
    UniformDropCompressor,
    WindowDropCompressor,
    assert_single_mode,
    build_compressor,
)
from kvspec.compressor.models import CompressedKVMeta, CompressorSpec, SyntheticKV
from kvspec.core.loader import load_config
from kvspec.enums import CompressorKind, Scenario
from kvspec.exceptions import (
    CompressionError,
    ConfigValidationError,
    KVSpecError,
    UnsupportedOperationError,
)
from tests.utils import long_context_config, long_context_doc

_KV = SyntheticKV(num_layers=2, num_heads=4, num_tokens=100, head_bytes=256)


def _spec(**values) -> CompressorSpec:
    return CompressorSpec(**values)


def _uniform(seed: int = 0) -> UniformDropCompressor:
    return UniformDropCompressor(_spec(kind="drop-uniform", mode="offline", ratio=0.25), seed=seed)


def _window() -> WindowDropCompressor:
    return WindowDropCompressor(_spec(kind="drop-window", mode="online", ratio=0.25, window=25))


def test_uniform_drop_keeps_the_ratio():
    meta = _uniform().compress(_KV)

    assert meta.retained_per_layer() == [25, 25]
    assert meta.payload_bytes == 2 * 25 * 4 * 256
    assert meta.ratio == pytest.approx(0.25)

    for drops in meta.dropped_indices:
        assert drops.shape == (4, 75)
        for head in drops:
            assert len(np.unique(head)) == 75
            assert head.min() >= 0 and head.max() < 100


def test_uniform_drop_is_seeded():
    a = _uniform(seed=3).compress(_KV)
    b = _uniform(seed=3).compress(_KV)

    assert all(np.array_equal(x, y) for x, y in zip(a.dropped_indices, b.dropped_indices))


def test_uniform_drop_rejects_a_ratio_keeping_nothing():
    with pytest.raises(CompressionError):
        _uniform().compress(_KV, ratio=0.001)


def test_decompress_returns_the_retained_positions():
    meta = _uniform().compress(_KV)
    restored = _uniform().decompress(meta)

    assert restored.nbytes == meta.payload_bytes
    for drops, kept in zip(meta.dropped_indices, restored.retained_positions):
        assert kept.shape == (4, 25)
        for head_drops, head_kept in zip(drops, kept):
            assert sorted(set(head_drops) | set(head_kept)) == list(range(100))


def test_window_drop_keeps_sinks_and_recent_tokens():
    meta = _window().compress(_KV)
    kept = _window().decompress(meta).retained_positions[0][0]

    assert list(kept) == [0, 1, 2, 3] + list(range(79, 100))


def test_window_update_drops_what_slid_out():
    compressor = _window()
    meta = compressor.compress(_KV).with_tokens(110)

    new = compressor.update(0, [meta], [(0, 110)])

    assert len(new) == 1
    assert new[0].shape == (4, 10)
    assert list(new[0][0]) == list(range(79, 89))

    meta.append_drops(0, new[0])
    assert meta.retained_per_layer() == [25, 35]


def test_window_update_validates_offsets():
    compressor = _window()
    meta = compressor.compress(_KV)

    with pytest.raises(CompressionError):
        compressor.update(0, [meta, meta], [(0, 100), (90, 200)])

    with pytest.raises(CompressionError):
        compressor.update(0, [meta], [(0, 100), (100, 200)])

    with pytest.raises(CompressionError):
        compressor.update(5, [meta], [(0, 100)])


def test_quantization_changes_only_the_bit_scheme():
    compressor = QuantCompressor(_spec(kind="quant-uniform", mode="offline", bits=4))
    meta = compressor.compress(_KV)

    assert meta.bit_scheme == 4
    assert meta.retained_per_layer() == [100, 100]
    assert meta.ratio == pytest.approx(0.25)
    assert compressor.decompress(meta).nbytes == _KV.full_bytes

    with pytest.raises(CompressionError):
        compressor.compress(SyntheticKV(1, 1, 10, head_bytes=3))

    with pytest.raises(CompressionError):
        compressor.compress(_KV, ratio=0.01)


def test_offline_compressors_have_no_update():
    with pytest.raises(UnsupportedOperationError):
        _uniform().update(0, [], [])

    with pytest.raises(UnsupportedOperationError):
        QuantCompressor(_spec(kind="quant-uniform", mode="offline", bits=8)).update(0, [], [])


def test_empty_context():
    meta = _uniform().compress(SyntheticKV(1, 2, 0, 64))
    assert meta.retained_per_layer() == [0]
    assert meta.ratio == 0.0


def test_one_mode_at_a_time():
    dropped = _uniform().compress(_KV)
    quantized = QuantCompressor(_spec(kind="quant-uniform", mode="offline", bits=4)).compress(_KV)

    assert_single_mode([dropped, _window().compress(_KV)])

    with pytest.raises(CompressionError):
        assert_single_mode([dropped, quantized])


def test_metadata_shape_law():
    with pytest.raises(CompressionError):
        CompressedKVMeta(
            kind=CompressorKind.DROP_UNIFORM,
            kv=_KV,
            dropped_indices=[np.zeros((3, 5), dtype=np.int64), np.zeros((4, 5), dtype=np.int64)],
        )


@pytest.mark.parametrize(
    "values",
    [
        {"kind": "quant-uniform", "mode": "offline"},
        {"kind": "quant-uniform", "mode": "online", "bits": 4},
        {"kind": "drop-window", "mode": "offline", "ratio": 0.25},
        {"kind": "drop-uniform", "mode": "offline", "ratio": 1.0},
        {"kind": "drop-window", "mode": "online", "ratio": 0.25, "window": 3},
    ],
)
def test_spec_validation(values):
    with pytest.raises(ValidationError):
        CompressorSpec(**values)


def test_build_compressor():
    assert isinstance(build_compressor(_spec(kind="drop-uniform", mode="offline", ratio=0.5)), UniformDropCompressor)
    assert isinstance(build_compressor(_spec(kind="quant-uniform", mode="offline", bits=8)), QuantCompressor)

    with pytest.raises(CompressionError):
        UniformDropCompressor(_spec(kind="quant-uniform", mode="offline", bits=8))


def test_config_ties_compressor_to_scenario():
    online = {"kind": "drop-window", "mode": "online", "ratio": 0.25, "overhead_s": 0.001}
    config = long_context_config(compressor=online)

    assert config.iteration_overhead == 0.001

    mismatched = long_context_doc(compressor={"kind": "quant-uniform", "mode": "offline", "bits": 8})

    with pytest.raises(ConfigValidationError, match="disagrees"):
        load_config(orjson.dumps(mismatched))


def test_compressor_scenario_must_match_the_run():
    declared = {"kind": "quant-uniform", "mode": "offline", "bits": 4}

    assert long_context_config(compressor=declared).compressor.scenario is None
    assert (
        long_context_config(compressor={**declared, "scenario": "long-context"}).compressor.scenario
        == Scenario.LONG_CONTEXT
    )

    mismatched = long_context_doc(compressor={**declared, "scenario": "remote-prefix"})

    with pytest.raises(ConfigValidationError, match="declared for remote-prefix"):
        load_config(orjson.dumps(mismatched))


def test_compressor_errors_are_documented_domain_errors():
    for error in (CompressionError, UnsupportedOperationError):
        assert issubclass(error, KVSpecError)
        assert error.__doc__
