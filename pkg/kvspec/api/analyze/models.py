from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from kvspec.core.models import AcceptanceModel
from kvspec.enums import ServingPath


class TIterRequest(BaseModel):
    weights_bytes: float = Field(gt=0)
    batch_size: int = Field(ge=1)
    kv_full_bytes: float = Field(gt=0)
    compression_ratio: float = Field(gt=0, le=1)
    draft_length: int = Field(ge=1)
    hbm_bandwidth: float = Field(gt=0)
    interconnect_bandwidth: Optional[float] = Field(
        default=None, gt=0, description="Omit for an unbounded interconnect."
    )


class TIterResponse(BaseModel):
    t_iter_s: float
    t_gpu_s: float
    t_xfer_s: float
    kv_avg_bytes: float


class RemoteLatencyRequest(BaseModel):
    kv_full_bytes: float = Field(gt=0)
    compression_ratio: float = Field(gt=0, le=1)
    output_tokens: int = Field(ge=1)
    draft_length: int = Field(ge=1)
    gamma: float = Field(gt=0, le=1)
    storage_remote_bandwidth: float = Field(gt=0)
    storage_local_bandwidth: float = Field(gt=0)
    decode_time: float = Field(gt=0)
    verify_forward_time: float = Field(default=0.0, ge=0)


class RemoteLatencyResponse(BaseModel):
    latency_s: float
    startup_s: float
    cycle_s: float
    cycles: float


class HardwareBody(BaseModel):
    hbm_bandwidth: float = Field(gt=0)
    interconnect_bandwidth: float = Field(ge=0)
    gpu_mem: float = Field(gt=0)


class IntraKnobsBody(BaseModel):
    offloaded_count: int = Field(ge=0)
    draft_length: int = Field(ge=1)
    compression: float = Field(gt=0, le=1)
    cycles_per_load: int = Field(default=1, ge=1)


class IntraRequest(BaseModel):
    hardware: HardwareBody
    weights_bytes: float = Field(gt=0)
    kv_full_bytes: float = Field(gt=0)
    acceptance: AcceptanceModel
    batch_size: int = Field(ge=1)
    knobs: IntraKnobsBody


class IntraGridsBody(BaseModel):
    batch_sizes: List[int] = Field(min_items=1)
    x: List[int] = Field(min_items=1)
    c: List[float] = Field(min_items=1)
    l: List[int] = [1]


class IntraOptimizeRequest(BaseModel):
    hardware: HardwareBody
    weights_bytes: float = Field(gt=0)
    kv_full_bytes: float = Field(gt=0)
    acceptance: AcceptanceModel
    grids: IntraGridsBody


class IntraResponse(BaseModel):
    feasible: bool
    constraint: Optional[str] = None
    batch_size: int
    knobs: IntraKnobsBody
    throughput_tok_s: Optional[float] = None
    t_gpu_s: Optional[float] = None
    t_xfer_s: Optional[float] = None
    baseline_tok_s: float


class InterRequest(BaseModel):
    output_tokens: int = Field(ge=1)
    draft_length: int = Field(ge=1)
    gamma: float = Field(gt=0, le=1)
    compression_ratio: float = Field(gt=0, le=1)
    kv_full_bytes: float = Field(gt=0)
    storage_local_bandwidth: float = Field(gt=0)
    storage_remote_bandwidth: float = Field(gt=0)
    t_tok: float = Field(gt=0)
    t_tok_remote: Optional[float] = Field(default=None, gt=0)
    local_gpus: int = Field(ge=0)
    remote_gpus: int = Field(ge=0)
    b_max: int = Field(ge=1)
    paths: List[ServingPath] = list(ServingPath)


class InterResponse(BaseModel):
    throughput_tok_s: float
    rates: Dict[str, float]
    binding: List[str]
    usage: Dict[str, float]


class ComposeRequest(BaseModel):
    draft_length: int = Field(ge=1)
    gamma: float = Field(ge=0, le=1)
    d_e: int = Field(default=1, ge=1)
    gamma_e: Optional[float] = Field(default=None, ge=0, le=1)


class ComposeResponse(BaseModel):
    accepted_length: float
    multiplier: float
