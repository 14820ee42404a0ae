import dataclasses
import logging
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Extra, root_validator, validator

from kvspec.enums import CompressorKind, CompressorMode, Scenario
from kvspec.exceptions import CompressionError

_logger = logging.getLogger(__name__)

BASELINE_BITS = 16


class CompressorSpec(BaseModel):
    """The `compressor` section of a run configuration."""

    class Config:
        allow_mutation = False
        extra = Extra.forbid

    kind: CompressorKind
    mode: CompressorMode
    scenario: Optional[Scenario] = None
    ratio: Optional[float] = None
    bits: Optional[int] = None
    window: Optional[int] = None
    sink_tokens: int = 4
    overhead_s: float = 0.0

    @validator("ratio")
    def _ratio_in_range(cls, v):
        if v is not None and not 0.0 < v < 1.0:
            raise ValueError("compressor ratio out of (0,1)")
        return v

    @validator("bits")
    def _bits_in_range(cls, v):
        if v is not None and not 1 <= v < BASELINE_BITS:
            raise ValueError(f"bits must be in [1,{BASELINE_BITS})")
        return v

    @validator("overhead_s")
    def _overhead_non_negative(cls, v):
        if v < 0:
            raise ValueError("overhead_s must be >= 0")
        return v

    @validator("sink_tokens")
    def _sink_non_negative(cls, v):
        if v < 0:
            raise ValueError("sink_tokens must be >= 0")
        return v

    @root_validator(skip_on_failure=True)
    def _kind_parameters(cls, values):
        kind = values["kind"]
        mode = values["mode"]

        if kind == CompressorKind.QUANT_UNIFORM:
            if values.get("bits") is None:
                raise ValueError("quant-uniform requires bits")
            if mode != CompressorMode.OFFLINE:
                raise ValueError("quant-uniform is an offline compressor")
        elif kind == CompressorKind.DROP_UNIFORM:
            if values.get("ratio") is None:
                raise ValueError("drop-uniform requires ratio")
            if mode != CompressorMode.OFFLINE:
                raise ValueError("drop-uniform is an offline compressor")
        elif kind == CompressorKind.DROP_WINDOW:
            if values.get("ratio") is None:
                raise ValueError("drop-window requires ratio")
            if mode != CompressorMode.ONLINE:
                raise ValueError("drop-window is an online compressor")
            window = values.get("window")
            if window is not None and window <= values["sink_tokens"]:
                raise ValueError("window must exceed sink_tokens")

        return values

    @property
    def target_ratio(self) -> float:
        if self.kind == CompressorKind.QUANT_UNIFORM:
            return self.bits / BASELINE_BITS

        return self.ratio

    @property
    def iteration_overhead(self) -> float:
        return self.overhead_s if self.mode == CompressorMode.ONLINE else 0.0


@dataclasses.dataclass(frozen=True)
class SyntheticKV:
    """Shape-only description of one request's KV cache at the 16-bit baseline."""

    num_layers: int
    num_heads: int
    num_tokens: int
    head_bytes: int

    def __post_init__(self):
        if self.num_layers < 1 or self.num_heads < 1:
            raise ValueError("a KV description needs at least one layer and one head")

        if self.num_tokens < 0 or self.head_bytes < 1:
            raise ValueError("num_tokens must be >= 0 and head_bytes >= 1")

    @property
    def full_bytes(self) -> int:
        return self.num_layers * self.num_heads * self.num_tokens * self.head_bytes


@dataclasses.dataclass
class CompressedKVMeta:
    """Per-request compression metadata: dropped positions per layer and the bit scheme.

    Each entry of `dropped_indices` is a (num_heads, n_dropped) integer array.
    """

    kind: CompressorKind
    kv: SyntheticKV
    dropped_indices: List[np.ndarray]
    bit_scheme: int = BASELINE_BITS
    payload_bytes: int = dataclasses.field(default=0)

    def __post_init__(self):
        if len(self.dropped_indices) != self.kv.num_layers:
            raise CompressionError("dropped_indices needs one entry per layer")

        for layer, drops in enumerate(self.dropped_indices):
            self._check_layer(layer, drops)

        self.payload_bytes = self.expected_payload()

    def _check_layer(self, layer: int, drops: np.ndarray):
        if drops.ndim != 2 or drops.shape[0] != self.kv.num_heads:
            raise CompressionError(
                f"layer {layer}: drops must have shape (num_heads, n), got {drops.shape}"
            )

        if drops.shape[1] > self.kv.num_tokens:
            raise CompressionError(f"layer {layer}: more drops than tokens")

    def retained_per_layer(self) -> List[int]:
        return [self.kv.num_tokens - int(drops.shape[1]) for drops in self.dropped_indices]

    def expected_payload(self) -> int:
        per_token = self.kv.num_heads * self.kv.head_bytes * self.bit_scheme
        return sum(r * per_token for r in self.retained_per_layer()) // BASELINE_BITS

    @property
    def ratio(self) -> float:
        full = self.kv.full_bytes
        return self.payload_bytes / full if full else 0.0

    def with_tokens(self, num_tokens: int) -> "CompressedKVMeta":
        """The same metadata over a context grown to `num_tokens` positions."""

        grown = dataclasses.replace(self.kv, num_tokens=num_tokens)
        return CompressedKVMeta(
            kind=self.kind,
            kv=grown,
            dropped_indices=list(self.dropped_indices),
            bit_scheme=self.bit_scheme,
        )

    def append_drops(self, layer: int, new_drops: np.ndarray):
        merged = np.concatenate([self.dropped_indices[layer], new_drops], axis=1)
        self._check_layer(layer, merged)
        self.dropped_indices[layer] = merged
        self.payload_bytes = self.expected_payload()
        _logger.debug(
            "Layer %s now drops %s tokens per head", layer, merged.shape[1]
        )


@dataclasses.dataclass(frozen=True)
class DecompressedKV:
    """What the drafter can rebuild: retained positions per layer and their 16-bit size."""

    kv: SyntheticKV
    retained_positions: List[np.ndarray]
    nbytes: int
