"""
Toy compressors over shape-only KV descriptions.

Dropping compressors record which token positions each head loses; the
quantizing one only changes the bit scheme. Within a layer every head drops
the same number of positions.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from kvspec.compressor.models import (
    BASELINE_BITS,
    CompressedKVMeta,
    CompressorSpec,
    DecompressedKV,
    SyntheticKV,
)
from kvspec.enums import CompressorKind, CompressorMode
from kvspec.exceptions import CompressionError, UnsupportedOperationError

_logger = logging.getLogger(__name__)

RequestOffsets = Sequence[Tuple[int, int]]


def _no_drops(kv: SyntheticKV) -> List[np.ndarray]:
    return [np.zeros((kv.num_heads, 0), dtype=np.int64) for _ in range(kv.num_layers)]


def _retained_count(num_tokens: int, ratio: float) -> int:
    if not 0.0 < ratio < 1.0:
        raise CompressionError("compression ratio out of (0,1)")

    retained = int(round(ratio * num_tokens))

    if retained < 1:
        raise CompressionError(
            f"ratio {ratio} keeps less than one token out of {num_tokens} per head"
        )

    return retained


class KVCompressor:
    kind: CompressorKind

    def __init__(self, spec: CompressorSpec):
        if spec.kind != self.kind:
            raise CompressionError(f"{type(self).__name__} cannot run a {spec.kind.value} spec")

        self.spec = spec

    @property
    def mode(self) -> CompressorMode:
        return self.spec.mode

    def compress(self, kv: SyntheticKV, ratio: Optional[float] = None) -> CompressedKVMeta:
        raise NotImplementedError

    def decompress(self, meta: CompressedKVMeta) -> DecompressedKV:
        raise NotImplementedError

    def update(
        self,
        layer_index: int,
        iteration_state: Sequence[CompressedKVMeta],
        request_offsets: RequestOffsets,
    ) -> List[np.ndarray]:
        raise UnsupportedOperationError(
            f"{self.kind.value} is an offline compressor and has no per-iteration update"
        )


class _DroppingCompressor(KVCompressor):
    def decompress(self, meta: CompressedKVMeta) -> DecompressedKV:
        kv = meta.kv
        retained = []

        for drops in meta.dropped_indices:
            mask = np.ones((kv.num_heads, kv.num_tokens), dtype=bool)
            np.put_along_axis(mask, drops, False, axis=1)
            keep = int(kv.num_tokens - drops.shape[1])
            retained.append(np.nonzero(mask)[1].reshape(kv.num_heads, keep))

        nbytes = sum(kv.num_heads * kv.head_bytes * int(r.shape[1]) for r in retained)
        return DecompressedKV(kv=kv, retained_positions=retained, nbytes=nbytes)


class UniformDropCompressor(_DroppingCompressor):
    """Offline: every head independently drops a uniform random subset."""

    kind = CompressorKind.DROP_UNIFORM

    def __init__(self, spec: CompressorSpec, seed: int = 0):
        super().__init__(spec)
        self.rng = np.random.default_rng(seed)

    def compress(self, kv: SyntheticKV, ratio: Optional[float] = None) -> CompressedKVMeta:
        ratio = self.spec.ratio if ratio is None else ratio

        if kv.num_tokens == 0:
            return CompressedKVMeta(kind=self.kind, kv=kv, dropped_indices=_no_drops(kv))

        n_drop = kv.num_tokens - _retained_count(kv.num_tokens, ratio)
        dropped = []

        for _ in range(kv.num_layers):
            order = self.rng.random((kv.num_heads, kv.num_tokens)).argsort(axis=1)
            dropped.append(np.sort(order[:, :n_drop], axis=1).astype(np.int64))

        meta = CompressedKVMeta(kind=self.kind, kv=kv, dropped_indices=dropped)
        _logger.debug(
            "Dropped %s of %s tokens per head (payload %s bytes)",
            n_drop,
            kv.num_tokens,
            meta.payload_bytes,
        )
        return meta


class WindowDropCompressor(_DroppingCompressor):
    """Online: keep the first `sink_tokens` positions and the newest ones up to the budget."""

    kind = CompressorKind.DROP_WINDOW

    def _budget(self, num_tokens: int, ratio: Optional[float] = None) -> int:
        if self.spec.window is not None and ratio is None:
            return self.spec.window

        return _retained_count(num_tokens, self.spec.ratio if ratio is None else ratio)

    def _target_drops(self, num_tokens: int, budget: int) -> np.ndarray:
        sink = min(self.spec.sink_tokens, budget)
        recent = budget - sink

        if num_tokens <= budget:
            return np.zeros(0, dtype=np.int64)

        return np.arange(sink, num_tokens - recent, dtype=np.int64)

    def compress(self, kv: SyntheticKV, ratio: Optional[float] = None) -> CompressedKVMeta:
        if kv.num_tokens == 0:
            return CompressedKVMeta(kind=self.kind, kv=kv, dropped_indices=_no_drops(kv))

        positions = self._target_drops(kv.num_tokens, self._budget(kv.num_tokens, ratio))
        per_head = np.tile(positions, (kv.num_heads, 1))
        dropped = [per_head.copy() for _ in range(kv.num_layers)]
        return CompressedKVMeta(kind=self.kind, kv=kv, dropped_indices=dropped)

    def update(
        self,
        layer_index: int,
        iteration_state: Sequence[CompressedKVMeta],
        request_offsets: RequestOffsets,
    ) -> List[np.ndarray]:
        """New per-head drops for each request of the batch, in batch order.

        Request i currently holds `end - start` context positions. Metadata is
        not modified; callers append the returned drops themselves.
        """

        if len(iteration_state) != len(request_offsets):
            raise CompressionError("one metadata entry per request offset is required")

        expected_start = 0

        for start, end in request_offsets:
            if start != expected_start or end < start:
                raise CompressionError(
                    f"request offsets must partition the batch, got {list(request_offsets)}"
                )
            expected_start = end

        new_drops = []

        for meta, (start, end) in zip(iteration_state, request_offsets):
            if not 0 <= layer_index < meta.kv.num_layers:
                raise CompressionError(f"layer {layer_index} out of range")

            num_tokens = end - start
            already = meta.dropped_indices[layer_index]
            target = self._target_drops(num_tokens, self._budget(max(num_tokens, 1)))
            fresh = np.setdiff1d(target, already[0] if already.shape[1] else [])
            new_drops.append(np.tile(fresh.astype(np.int64), (meta.kv.num_heads, 1)))

        return new_drops


class QuantCompressor(KVCompressor):
    """Offline uniform k-bit quantization; no positions are dropped."""

    kind = CompressorKind.QUANT_UNIFORM

    def compress(self, kv: SyntheticKV, ratio: Optional[float] = None) -> CompressedKVMeta:
        bits = self.spec.bits

        if ratio is not None:
            bits = int(round(ratio * BASELINE_BITS))
            if not 1 <= bits < BASELINE_BITS:
                raise CompressionError(f"ratio {ratio} has no k-bit scheme")

        if (kv.head_bytes * bits) % BASELINE_BITS:
            raise CompressionError(
                f"head_bytes {kv.head_bytes} does not quantize to {bits} bits exactly"
            )

        return CompressedKVMeta(
            kind=self.kind, kv=kv, dropped_indices=_no_drops(kv), bit_scheme=bits
        )

    def decompress(self, meta: CompressedKVMeta) -> DecompressedKV:
        kv = meta.kv
        positions = np.tile(np.arange(kv.num_tokens, dtype=np.int64), (kv.num_heads, 1))
        return DecompressedKV(
            kv=kv,
            retained_positions=[positions] * kv.num_layers,
            nbytes=meta.payload_bytes * BASELINE_BITS // meta.bit_scheme,
        )


def build_compressor(spec: CompressorSpec, seed: int = 0) -> KVCompressor:
    if spec.kind == CompressorKind.DROP_UNIFORM:
        return UniformDropCompressor(spec, seed=seed)

    if spec.kind == CompressorKind.DROP_WINDOW:
        return WindowDropCompressor(spec)

    if spec.kind == CompressorKind.QUANT_UNIFORM:
        return QuantCompressor(spec)

    raise CompressionError(f"Unknown compressor kind: {spec.kind}")


def assert_single_mode(metas: Sequence[CompressedKVMeta]):
    """Reject token dropping and quantization held at the same time."""

    dropping = {meta.kind.is_dropping for meta in metas}

    if len(dropping) > 1:
        raise CompressionError(
            "token dropping and quantization cannot run concurrently: one mode at a time"
        )
