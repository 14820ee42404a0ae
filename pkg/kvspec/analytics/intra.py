"""
Closed-form intra-request throughput model for long-context decoding.

A batch of B homogeneous requests splits into B_g requests whose full KV
stays on the GPU (plain decoding) and B_c offloaded ones that draft x tokens
on compressed KV and then verify once on a reloaded full KV.
"""

import dataclasses
import logging
import math
from typing import Iterable, List, Optional, Sequence

import numpy as np
import polars as pl

from kvspec.core.acceptance import GammaFn
from kvspec.core.models import Request, SystemConfig
from kvspec.exceptions import InfeasibleError

_logger = logging.getLogger(__name__)

_MEM_TOL = 1e-12
_LOAD_TOL = 1e-12


def kv_avg(x: int, c: float, kv_full: float) -> float:
    """Average GPU KV footprint of an offloaded request over one draft/verify cycle."""

    if x < 1:
        raise ValueError("x must be >= 1")

    if not 0.0 < c <= 1.0:
        raise ValueError("compression_ratio out of (0,1]")

    return kv_full * (x * c + 1) / (x + 1)


def t_iter_staggered(
    weights_bytes: float,
    batch_size: int,
    kv_full: float,
    c: float,
    x: int,
    bw_hbm: float,
    bw_inter: float,
) -> float:
    t_gpu = (weights_bytes + batch_size * kv_full * (c + 1.0 / x)) / bw_hbm

    if math.isinf(bw_inter):
        return t_gpu

    t_xfer = batch_size * kv_full / (x * bw_inter)
    return max(t_gpu, t_xfer)


def t_iter_batch(
    weights_bytes: float,
    requests: List[Request],
    x: int,
    bw_hbm: float,
    bw_inter: float,
) -> float:
    """Staggered iteration time for a heterogeneous batch.

    Speculating requests contribute c + 1/x of their full KV per iteration,
    the others their whole full KV.
    """

    hbm = float(weights_bytes)
    link = 0.0

    for request in requests:
        if request.speculating:
            hbm += request.kv_full_bytes * (request.compression_ratio + 1.0 / x)
            link += request.kv_full_bytes / x
        else:
            hbm += request.kv_full_bytes

    return max(hbm / bw_hbm, link / bw_inter)


def t_req_remote(
    kv_full: float,
    c: float,
    K: int,
    x: int,
    gamma: float,
    bw_l: float,
    bw_h: float,
    t_decode: float,
    t_fwd: float,
) -> float:
    """Remote-prefix request latency: compressed startup, then overlapped draft/load cycles."""

    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma out of (0,1]")

    startup = c * kv_full / bw_l
    cycle = max(x * t_decode, kv_full / bw_h) + t_fwd
    return startup + (K / (x * gamma)) * cycle


def t_tok(weights_bytes: float, batch_size: int, kv_full: float, bw_hbm: float) -> float:
    """Per-request per-token decode time at batch occupancy B."""

    if batch_size < 1:
        raise ValueError("batch occupancy must be >= 1")

    return (weights_bytes / batch_size + kv_full) / bw_hbm


def b_max(gpu_mem: float, weights_bytes: float, kv_full: float) -> int:
    return max(0, int(math.floor((gpu_mem - weights_bytes) / kv_full)))


@dataclasses.dataclass(frozen=True)
class IntraParams:
    weights_bytes: float
    gpu_mem: float
    kv_full: float
    bw_hbm: float
    bw_inter: float

    def __post_init__(self):
        if self.weights_bytes <= 0 or self.gpu_mem <= 0 or self.kv_full <= 0:
            raise ValueError("weights_bytes, gpu_mem and kv_full must be > 0")

        if self.bw_hbm <= 0 or self.bw_inter < 0:
            raise ValueError("bandwidths must be positive (bw_inter may be 0)")

    @classmethod
    def from_config(cls, config: SystemConfig) -> "IntraParams":
        return cls(
            weights_bytes=config.model.weights_bytes,
            gpu_mem=config.hardware.gpu_mem,
            kv_full=config.kv_full_bytes,
            bw_hbm=config.hardware.hbm_bandwidth,
            bw_inter=config.hardware.interconnect_bandwidth,
        )

    @property
    def b_max(self) -> int:
        return b_max(self.gpu_mem, self.weights_bytes, self.kv_full)


@dataclasses.dataclass(frozen=True)
class IntraKnobs:
    offloaded_count: int
    draft_length: int
    compression: float
    cycles_per_load: int = 1


@dataclasses.dataclass(frozen=True)
class IntraPoint:
    batch_size: int
    knobs: IntraKnobs
    throughput: float
    t_gpu: float
    t_xfer: float
    tokens_per_iteration: float


def _objective(params: IntraParams, B, B_c, x, c, l, gamma):
    """Vectorized objective terms; returns (tokens/iter, T_gpu, T_xfer, memory, load)."""

    B_g = B - B_c
    avg = params.kv_full * (x * c + 1.0) / (x + 1.0)
    memory = params.weights_bytes + B_g * params.kv_full + B_c * avg
    t_gpu = memory / params.bw_hbm

    with np.errstate(divide="ignore", invalid="ignore"):
        t_xfer = np.where(
            B_c > 0,
            B_c * (1.0 - c) * params.kv_full / ((x + 1.0) * params.bw_inter * l),
            0.0,
        )

    tokens = B_g + B_c * (gamma * x + 1.0) / (x + 1.0)
    load = B_c * l / (x + 1.0)
    return tokens, t_gpu, t_xfer, memory, load


def _feasible(params: IntraParams, B_c, memory, load):
    mem_ok = memory <= params.gpu_mem * (1.0 + _MEM_TOL)
    load_ok = load <= 1.0 + _LOAD_TOL
    link_ok = (B_c == 0) | (params.bw_inter > 0)
    return mem_ok & load_ok & link_ok


def _check_knobs(batch_size: int, knobs: IntraKnobs):
    if not 0 <= knobs.offloaded_count <= batch_size:
        raise ValueError("offloaded_count must be within [0, B]")

    if knobs.draft_length < 1 or knobs.cycles_per_load < 1:
        raise ValueError("draft_length and cycles_per_load must be >= 1")

    if not 0.0 < knobs.compression <= 1.0:
        raise ValueError("compression_ratio out of (0,1]")


def evaluate_intra(
    knobs: IntraKnobs, params: IntraParams, batch_size: int, gamma: GammaFn
) -> IntraPoint:
    _check_knobs(batch_size, knobs)
    B_c, x, c, l = (
        knobs.offloaded_count,
        knobs.draft_length,
        knobs.compression,
        knobs.cycles_per_load,
    )
    g = gamma(x, c) if B_c > 0 else 1.0

    tokens, t_gpu, t_xfer, memory, load = _objective(
        params,
        np.float64(batch_size),
        np.float64(B_c),
        np.float64(x),
        np.float64(c),
        np.float64(l),
        np.float64(g),
    )

    if B_c > 0 and params.bw_inter <= 0:
        raise InfeasibleError("offloading needs interconnect bandwidth", "interconnect")

    if memory > params.gpu_mem * (1.0 + _MEM_TOL):
        raise InfeasibleError(
            f"memory {float(memory):.6g} exceeds GPU_mem {params.gpu_mem:.6g}", "memory"
        )

    if load > 1.0 + _LOAD_TOL:
        raise InfeasibleError(f"load constraint B_c*l/(x+1) = {float(load):.6g} > 1", "load")

    return IntraPoint(
        batch_size=batch_size,
        knobs=knobs,
        throughput=float(tokens / max(t_gpu, t_xfer)),
        t_gpu=float(t_gpu),
        t_xfer=float(t_xfer),
        tokens_per_iteration=float(tokens),
    )


def intra_throughput(
    knobs: IntraKnobs, params: IntraParams, batch_size: int, gamma: GammaFn
) -> float:
    return evaluate_intra(knobs, params, batch_size, gamma).throughput


def baseline_throughput(params: IntraParams) -> float:
    """Full-KV decoding at the largest batch that fits; 0 when nothing fits."""

    batch = params.b_max

    if batch == 0:
        return 0.0

    return batch * params.bw_hbm / (params.weights_bytes + batch * params.kv_full)


@dataclasses.dataclass(frozen=True)
class IntraGrids:
    x: Sequence[int]
    c: Sequence[float]
    l: Sequence[int]

    @classmethod
    def from_config(cls, config: SystemConfig) -> "IntraGrids":
        analysis = config.analysis
        return cls(x=analysis.x_grid, c=analysis.c_grid, l=analysis.l_grid)


def _gamma_matrix(gamma: GammaFn, xs: Sequence[int], cs: Sequence[float]) -> np.ndarray:
    return np.array([[gamma(x, c) for c in cs] for x in xs], dtype=np.float64)


def _batch_surface(
    params: IntraParams, batch_size: int, gamma_xc: np.ndarray, grids: IntraGrids
):
    """Throughput over (B_c, x, c, l) in 'ij' order; infeasible points are -inf."""

    B_c, xi, ci, li = np.meshgrid(
        np.arange(batch_size + 1, dtype=np.float64),
        np.arange(len(grids.x)),
        np.arange(len(grids.c)),
        np.arange(len(grids.l)),
        indexing="ij",
    )
    x = np.asarray(grids.x, dtype=np.float64)[xi]
    c = np.asarray(grids.c, dtype=np.float64)[ci]
    l = np.asarray(grids.l, dtype=np.float64)[li]
    g = np.where(B_c > 0, gamma_xc[xi, ci], 1.0)

    tokens, t_gpu, t_xfer, memory, load = _objective(
        params, np.float64(batch_size), B_c, x, c, l, g
    )
    feasible = _feasible(params, B_c, memory, load)
    throughput = np.where(feasible, tokens / np.maximum(t_gpu, t_xfer), -np.inf)
    return throughput, feasible, (B_c, x, c, l)


def optimize_intra(
    params: IntraParams,
    batch_sizes: Iterable[int],
    gamma: GammaFn,
    grids: IntraGrids,
) -> IntraPoint:
    """Exhaustive grid search; ties go to the lexicographically smallest (B, B_c, x, c, l)."""

    gamma_xc = _gamma_matrix(gamma, grids.x, grids.c)
    best: Optional[IntraPoint] = None

    for batch_size in sorted(set(batch_sizes)):
        throughput, _, _ = _batch_surface(params, batch_size, gamma_xc, grids)
        idx = np.unravel_index(int(np.argmax(throughput)), throughput.shape)
        value = float(throughput[idx])

        if not np.isfinite(value):
            continue

        if best is None or value > best.throughput:
            knobs = IntraKnobs(
                offloaded_count=int(idx[0]),
                draft_length=int(grids.x[idx[1]]),
                compression=float(grids.c[idx[2]]),
                cycles_per_load=int(grids.l[idx[3]]),
            )
            best = evaluate_intra(knobs, params, batch_size, gamma)

    if best is None:
        raise InfeasibleError("no feasible knob tuple in the search grid", "grid")

    _logger.debug(
        "Intra optimum: B=%s knobs=%s throughput=%.3f tok/s",
        best.batch_size,
        best.knobs,
        best.throughput,
    )

    return best


def sweep_intra(
    params: IntraParams, batch_size: int, gamma: GammaFn, grids: IntraGrids
) -> pl.DataFrame:
    """One row per grid point: B_c,x,c,l,feasible,throughput_tok_s."""

    gamma_xc = _gamma_matrix(gamma, grids.x, grids.c)
    throughput, feasible, (B_c, x, c, l) = _batch_surface(
        params, batch_size, gamma_xc, grids
    )

    return pl.DataFrame(
        {
            "B_c": B_c.ravel().astype(np.int64),
            "x": x.ravel().astype(np.int64),
            "c": c.ravel(),
            "l": l.ravel().astype(np.int64),
            "feasible": feasible.ravel(),
            "throughput_tok_s": np.where(feasible, throughput, np.nan).ravel(),
        }
    ).with_columns(pl.col("throughput_tok_s").fill_nan(None))


def speedup_curve(
    params: IntraParams,
    batch_sizes: Iterable[int],
    gamma: GammaFn,
    grids: IntraGrids,
) -> pl.DataFrame:
    """Best throughput per draft length over (B, B_c, c, l), relative to the full-KV baseline."""

    baseline = baseline_throughput(params)
    batch_sizes = sorted(set(batch_sizes))
    rows = {"x": [], "B": [], "B_c": [], "c": [], "l": [], "throughput_tok_s": [], "speedup": []}

    for x in grids.x:
        single = IntraGrids(x=[x], c=grids.c, l=grids.l)

        try:
            point = optimize_intra(params, batch_sizes, gamma, single)
        except InfeasibleError:
            continue

        rows["x"].append(int(x))
        rows["B"].append(point.batch_size)
        rows["B_c"].append(point.knobs.offloaded_count)
        rows["c"].append(point.knobs.compression)
        rows["l"].append(point.knobs.cycles_per_load)
        rows["throughput_tok_s"].append(point.throughput)
        rows["speedup"].append(point.throughput / baseline if baseline > 0 else None)

    return pl.DataFrame(
        rows,
        schema={
            "x": pl.Int64,
            "B": pl.Int64,
            "B_c": pl.Int64,
            "c": pl.Float64,
            "l": pl.Int64,
            "throughput_tok_s": pl.Float64,
            "speedup": pl.Float64,
        },
    )
