import logging
import math
from typing import Dict, List, Optional

from pydantic import BaseModel, Extra, root_validator, validator

from kvspec.compressor.models import CompressorSpec
from kvspec.enums import (
    AcceptanceKind,
    AcceptanceRealization,
    IterationTimeMode,
    Scenario,
    ServingPath,
)

_logger = logging.getLogger(__name__)

_PROB_TOL = 1e-12


def _is_unit_ratio(c: float) -> bool:
    return math.isclose(c, 1.0, rel_tol=0.0, abs_tol=_PROB_TOL)


def _check_compression_ratio(v: float) -> float:
    if v is None or not 0.0 < v <= 1.0:
        raise ValueError("compression_ratio out of (0,1]")

    return v


class FrozenModel(BaseModel):
    class Config:
        allow_mutation = False
        extra = Extra.forbid


class HardwareProfile(FrozenModel):
    """Bandwidths in bytes/s, memory in bytes."""

    hbm_bandwidth: float
    interconnect_bandwidth: float
    # delivered rate when the link runs below the one reloads are planned with
    link_bandwidth: Optional[float] = None
    storage_local_bandwidth: Optional[float] = None
    storage_remote_bandwidth: Optional[float] = None
    gpu_mem: int
    local_gpus: int = 1
    remote_gpus: int = 0

    @validator(
        "hbm_bandwidth",
        "interconnect_bandwidth",
        "link_bandwidth",
        "storage_local_bandwidth",
        "storage_remote_bandwidth",
    )
    def _bandwidth_positive(cls, v, field):
        if v is not None and not v > 0:
            raise ValueError(f"{field.name} must be > 0")
        return v

    @validator("gpu_mem")
    def _gpu_mem_positive(cls, v):
        if v <= 0:
            raise ValueError("gpu_mem must be > 0")
        return v

    @validator("local_gpus", "remote_gpus")
    def _gpu_count_non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be >= 0")
        return v

    @root_validator(skip_on_failure=True)
    def _at_least_one_gpu(cls, values):
        if values["local_gpus"] + values["remote_gpus"] < 1:
            raise ValueError("local_gpus + remote_gpus must be >= 1")
        return values


class ModelSpec(FrozenModel):
    weights_bytes: int
    kv_bytes_per_token: int

    @validator("weights_bytes", "kv_bytes_per_token")
    def _positive(cls, v, field):
        if v <= 0:
            raise ValueError(f"{field.name} must be > 0")
        return v


class Request(FrozenModel):
    id: int
    arrival: float = 0.0
    kv_full_bytes: int
    compression_ratio: float
    output_tokens: int
    speculating: bool = True
    # drafter payload set by the run's compressor; c * kv_full_bytes otherwise
    compressed_bytes: Optional[int] = None

    _check_c = validator("compression_ratio", allow_reuse=True)(
        _check_compression_ratio
    )

    @validator("arrival")
    def _arrival_non_negative(cls, v):
        if v < 0:
            raise ValueError("arrival must be >= 0")
        return v

    @validator("kv_full_bytes")
    def _kv_positive(cls, v):
        if v <= 0:
            raise ValueError("kv_full_bytes must be > 0")
        return v

    @validator("output_tokens")
    def _output_positive(cls, v):
        if v < 1:
            raise ValueError("output_tokens must be >= 1")
        return v

    @validator("compressed_bytes")
    def _compressed_in_range(cls, v, values):
        full = values.get("kv_full_bytes")

        if v is not None and (v < 0 or (full is not None and v > full)):
            raise ValueError("compressed_bytes out of [0, kv_full_bytes]")
        return v

    @property
    def kv_compressed_bytes(self) -> int:
        if self.compressed_bytes is not None:
            return self.compressed_bytes

        return int(round(self.compression_ratio * self.kv_full_bytes))


class TokenProbEntry(FrozenModel):
    c: float
    p: float

    _check_c = validator("c", allow_reuse=True)(_check_compression_ratio)

    @validator("p")
    def _probability(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("per-token probability out of [0,1]")
        return v


class GammaEntry(FrozenModel):
    x: int
    c: float
    gamma: float

    _check_c = validator("c", allow_reuse=True)(_check_compression_ratio)

    @validator("x")
    def _draft_length(cls, v):
        if v < 1:
            raise ValueError("table x must be >= 1")
        return v

    @validator("gamma")
    def _probability(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("gamma out of [0,1]")
        return v


class AcceptanceModel(FrozenModel):
    """Acceptance rate of the compressed-KV drafter.

    `per_token_prob` and `table` are lists of entries so that the document
    keeps compression ratios as numbers rather than stringified keys.
    """

    kind: AcceptanceKind
    per_token_prob: List[TokenProbEntry] = []
    table: List[GammaEntry] = []

    @root_validator(skip_on_failure=True)
    def _kind_payload(cls, values):
        kind = values["kind"]

        if kind == AcceptanceKind.PER_TOKEN_IID:
            if not values["per_token_prob"]:
                raise ValueError("per-token-iid acceptance needs per_token_prob")
            for entry in values["per_token_prob"]:
                if _is_unit_ratio(entry.c) and entry.p != 1.0:
                    raise ValueError("p(1) must be 1: c=1 means drafter == verifier")
        elif kind == AcceptanceKind.TABULATED:
            if not values["table"]:
                raise ValueError("tabulated acceptance needs table entries")
            cls._check_table(values["table"])

        return values

    @staticmethod
    def _check_table(table: List[GammaEntry]):
        by_c: Dict[float, List[GammaEntry]] = {}

        for entry in table:
            if _is_unit_ratio(entry.c) and entry.gamma != 1.0:
                raise ValueError("gamma(x, 1) must be 1 for all x")
            by_c.setdefault(entry.c, []).append(entry)

        for c, entries in by_c.items():
            entries = sorted(entries, key=lambda e: e.x)

            for prev, cur in zip(entries, entries[1:]):
                if cur.x == prev.x:
                    raise ValueError(f"duplicate table entry for x={cur.x}, c={c}")
                if cur.gamma > prev.gamma:
                    raise ValueError(
                        f"gamma must be non-increasing in x (c={c}, x={prev.x}->{cur.x})"
                    )


class RuntimeSpec(FrozenModel):
    draft_length: int = 25
    lookahead_window: int = 64
    iteration_time_mode: IterationTimeMode = IterationTimeMode.DERIVED
    fixed_iteration_time: Optional[float] = None
    acceptance_realization: AcceptanceRealization = AcceptanceRealization.SAMPLED
    seed: int = 0

    @validator("draft_length")
    def _draft_length(cls, v):
        if v < 1:
            raise ValueError("draft_length must be >= 1")
        return v

    @validator("lookahead_window")
    def _window(cls, v):
        if v < 2:
            raise ValueError("lookahead_window must be >= 2")
        return v

    @validator("fixed_iteration_time")
    def _fixed_positive(cls, v):
        if v is not None and v <= 0:
            raise ValueError("fixed_iteration_time must be > 0")
        return v

    @root_validator(skip_on_failure=True)
    def _fixed_mode_needs_time(cls, values):
        if (
            values["iteration_time_mode"] == IterationTimeMode.FIXED
            and values.get("fixed_iteration_time") is None
        ):
            raise ValueError("iteration_time_mode=fixed requires fixed_iteration_time")
        return values


class ScenarioSpec(FrozenModel):
    """Scenario kind plus the homogeneous workload used when no trace is given."""

    kind: Scenario
    compression_ratio: float = 0.25
    batch_size: int = 1
    kv_full_bytes: Optional[int] = None
    context_tokens: Optional[int] = None
    output_tokens: int = 256
    decode_time: Optional[float] = None
    verify_forward_time: float = 0.0
    verify_cached: bool = False

    _check_c = validator("compression_ratio", allow_reuse=True)(
        _check_compression_ratio
    )

    @validator("batch_size", "output_tokens")
    def _at_least_one(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("kv_full_bytes", "context_tokens")
    def _optional_positive(cls, v, field):
        if v is not None and v <= 0:
            raise ValueError(f"{field.name} must be > 0")
        return v

    @validator("decode_time")
    def _decode_positive(cls, v):
        if v is not None and v <= 0:
            raise ValueError("decode_time must be > 0")
        return v

    @validator("verify_forward_time")
    def _forward_non_negative(cls, v):
        if v < 0:
            raise ValueError("verify_forward_time must be >= 0")
        return v


class GammaEEntry(FrozenModel):
    d_e: int
    gamma: float

    @validator("d_e")
    def _depth(cls, v):
        if v < 1:
            raise ValueError("d_e must be >= 1")
        return v

    @validator("gamma")
    def _probability(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("gamma_e out of [0,1]")
        return v


def _default_x_grid() -> List[int]:
    return list(range(1, 65))


def _default_c_grid() -> List[float]:
    return [round(0.1 * i, 1) for i in range(1, 10)]


def _default_l_grid() -> List[int]:
    return list(range(1, 9))


class AnalysisSpec(FrozenModel):
    """Optional `analysis` section: search grids and inter-request knobs."""

    batch_sizes: Optional[List[int]] = None
    x_grid: List[int] = None
    c_grid: List[float] = None
    l_grid: List[int] = None
    d_e: List[int] = [1]
    gamma_e: List[GammaEEntry] = []
    occupancy: Optional[int] = None
    fixed_point: bool = False
    paths: List[ServingPath] = list(ServingPath)

    @validator("x_grid", pre=True, always=True)
    def _x_default(cls, v):
        return _default_x_grid() if v is None else v

    @validator("c_grid", pre=True, always=True)
    def _c_default(cls, v):
        return _default_c_grid() if v is None else v

    @validator("l_grid", pre=True, always=True)
    def _l_default(cls, v):
        return _default_l_grid() if v is None else v

    @validator("x_grid", "l_grid", "d_e")
    def _grid_positive(cls, v, field):
        if not v or min(v) < 1:
            raise ValueError(f"{field.name} must be non-empty with values >= 1")
        return sorted(set(v))

    @validator("c_grid")
    def _c_grid_range(cls, v):
        if not v or any(not 0.0 < c <= 1.0 for c in v):
            raise ValueError("c_grid values out of (0,1]")
        return sorted(set(v))

    @validator("batch_sizes")
    def _batch_sizes(cls, v):
        if v is not None and (not v or min(v) < 1):
            raise ValueError("batch_sizes must be non-empty with values >= 1")
        return sorted(set(v)) if v is not None else v

    @validator("occupancy")
    def _occupancy(cls, v):
        if v is not None and v < 1:
            raise ValueError("occupancy must be >= 1")
        return v

    def gamma_e_for(self, d_e: int) -> Optional[float]:
        for entry in self.gamma_e:
            if entry.d_e == d_e:
                return entry.gamma

        return None


class SystemConfig(FrozenModel):
    hardware: HardwareProfile
    model: ModelSpec
    acceptance: AcceptanceModel
    runtime: RuntimeSpec = RuntimeSpec()
    scenario: ScenarioSpec
    compressor: Optional[CompressorSpec] = None
    analysis: AnalysisSpec = AnalysisSpec()

    @root_validator(skip_on_failure=True)
    def _scenario_requirements(cls, values):
        hw: HardwareProfile = values["hardware"]
        scenario: ScenarioSpec = values["scenario"]

        if scenario.kind == Scenario.REMOTE_PREFIX:
            if hw.storage_local_bandwidth is None:
                raise ValueError("remote-prefix requires storage_local_bandwidth (BW_h)")
            if hw.storage_remote_bandwidth is None:
                raise ValueError(
                    "remote-prefix requires storage_remote_bandwidth (BW_l)"
                )
            if not hw.storage_local_bandwidth > hw.storage_remote_bandwidth:
                raise ValueError(
                    "remote-prefix requires storage_local_bandwidth > storage_remote_bandwidth"
                )

        compressor: Optional[CompressorSpec] = values.get("compressor")

        if compressor is not None and compressor.scenario not in (None, scenario.kind):
            raise ValueError(
                "compressor is declared for {} but the scenario is {}".format(
                    compressor.scenario.value, scenario.kind.value
                )
            )

        if compressor is not None and not math.isclose(
            compressor.target_ratio, scenario.compression_ratio, rel_tol=1e-12
        ):
            raise ValueError(
                "compressor ratio {} disagrees with scenario.compression_ratio {}".format(
                    compressor.target_ratio, scenario.compression_ratio
                )
            )

        return values

    @property
    def draft_length(self) -> int:
        return self.runtime.draft_length

    @property
    def lookahead_window(self) -> int:
        return self.runtime.lookahead_window

    @property
    def iteration_time_mode(self) -> IterationTimeMode:
        return self.runtime.iteration_time_mode

    @property
    def scenario_kind(self) -> Scenario:
        return self.scenario.kind

    @property
    def kv_full_bytes(self) -> int:
        """Per-request full KV size for synthetic workloads."""

        if self.scenario.kv_full_bytes is not None:
            return self.scenario.kv_full_bytes

        if self.scenario.context_tokens is not None:
            return self.scenario.context_tokens * self.model.kv_bytes_per_token

        raise ValueError("scenario needs kv_full_bytes or context_tokens")

    @property
    def iteration_overhead(self) -> float:
        return self.compressor.iteration_overhead if self.compressor else 0.0
