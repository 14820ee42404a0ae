"""
Per-request resource costs of the six remote-prefix serving paths.

Costs are seconds of network time, GPU compute time and slot occupancy on
the local pool (next to the KV store) and on the remote pool.
"""

import dataclasses
import logging
import math
from typing import Dict, List, Optional, Sequence

from kvspec.analytics.intra import b_max, t_tok
from kvspec.core.acceptance import expected_gamma
from kvspec.core.models import SystemConfig
from kvspec.enums import ServingPath
from kvspec.exceptions import ContractError, InfeasibleError

_logger = logging.getLogger(__name__)

_CEIL_TOL = 1e-9


def ceil_tol(value: float) -> int:
    """Ceiling that ignores rounding noise just above an integer."""

    return math.ceil(value - _CEIL_TOL * max(1.0, abs(value)))


@dataclasses.dataclass(frozen=True)
class ResourceCost:
    net: float = 0.0
    gpu: float = 0.0
    mem: float = 0.0

    def __post_init__(self):
        for name in ("net", "gpu", "mem"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} cost must be finite and >= 0, got {value}")

    def as_tuple(self):
        return (self.net, self.gpu, self.mem)


@dataclasses.dataclass(frozen=True)
class PathCost:
    path: ServingPath
    local: ResourceCost
    remote: ResourceCost

    def column(self) -> List[float]:
        return list(self.local.as_tuple()) + list(self.remote.as_tuple())


@dataclasses.dataclass(frozen=True)
class InterParams:
    """Inputs to the path costs; `t_tok_remote` defaults to the local value."""

    K: int
    x: int
    gamma: float
    c: float
    kv_full: float
    bw_h: float
    bw_l: float
    t_tok: float
    t_tok_remote: Optional[float] = None

    def __post_init__(self):
        if self.K < 1 or self.x < 1:
            raise ValueError("K and x must be >= 1")

        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma out of (0,1]")

        if not 0.0 < self.c <= 1.0:
            raise ValueError("compression_ratio out of (0,1]")

        if self.bw_h <= 0 or self.bw_l <= 0 or self.t_tok <= 0:
            raise ValueError("bandwidths and t_tok must be > 0")

    @property
    def t_tok_r(self) -> float:
        return self.t_tok if self.t_tok_remote is None else self.t_tok_remote

    @property
    def t_h(self) -> float:
        return self.kv_full / self.bw_h

    @property
    def t_l(self) -> float:
        return self.kv_full / self.bw_l

    @property
    def t_l_c(self) -> float:
        return self.c * self.kv_full / self.bw_l

    @property
    def t_l_rem(self) -> float:
        return (1.0 - self.c) * self.kv_full / self.bw_l

    @property
    def n_1(self) -> int:
        return ceil_tol(self.K / (self.gamma * self.x))

    @property
    def n_draft(self) -> float:
        return min(self.t_l_rem / self.t_tok_r, self.K / self.gamma)

    @property
    def n_2(self) -> int:
        return ceil_tol(self.n_draft / self.x)

    @property
    def k_2(self) -> float:
        return max(0.0, self.K - self.gamma * self.n_draft)

    def with_occupancy(self, t_tok_local: float, t_tok_remote: float) -> "InterParams":
        return dataclasses.replace(self, t_tok=t_tok_local, t_tok_remote=t_tok_remote)

    @classmethod
    def from_config(
        cls,
        config: SystemConfig,
        occupancy_local: Optional[float] = None,
        occupancy_remote: Optional[float] = None,
    ) -> "InterParams":
        hw = config.hardware
        kv_full = config.kv_full_bytes
        M = config.model.weights_bytes
        slots = b_max(hw.gpu_mem, M, kv_full)

        if hw.storage_local_bandwidth is None or hw.storage_remote_bandwidth is None:
            raise ContractError(
                "inter-request analysis needs storage_local_bandwidth and storage_remote_bandwidth"
            )

        if slots == 0:
            raise InfeasibleError("no request fits next to the model weights", "memory")

        declared = config.analysis.occupancy or slots
        local = occupancy_local or declared
        remote = occupancy_remote or declared
        c = config.scenario.compression_ratio
        x = config.draft_length

        return cls(
            K=config.scenario.output_tokens,
            x=x,
            gamma=expected_gamma(config.acceptance, x, c),
            c=c,
            kv_full=kv_full,
            bw_h=hw.storage_local_bandwidth,
            bw_l=hw.storage_remote_bandwidth,
            t_tok=t_tok(M, local, kv_full, hw.hbm_bandwidth),
            t_tok_remote=t_tok(M, remote, kv_full, hw.hbm_bandwidth),
        )


def _p2_remote(p: InterParams) -> ResourceCost:
    return ResourceCost(
        net=p.t_l_c + p.t_l_rem,
        gpu=(p.n_draft + p.k_2) * p.t_tok_r,
        mem=p.t_l_c + max(p.n_draft * p.t_tok_r, p.t_l_rem) + p.k_2 * p.t_tok_r,
    )


def _p1_remote(p: InterParams) -> ResourceCost:
    drafts = p.K / p.gamma
    return ResourceCost(
        net=p.t_l_c,
        gpu=drafts * p.t_tok_r,
        mem=p.t_l_c + drafts * p.t_tok_r,
    )


def _stateless_local(p: InterParams, rounds: int) -> ResourceCost:
    return ResourceCost(
        net=rounds * p.t_h,
        gpu=rounds * p.t_tok,
        mem=rounds * (p.t_h + p.t_tok),
    )


def path_costs(path: ServingPath, params: InterParams) -> PathCost:
    p = params
    none = ResourceCost()

    if path == ServingPath.B1:
        local = ResourceCost(net=p.t_h, gpu=p.K * p.t_tok, mem=p.t_h + p.K * p.t_tok)
        return PathCost(path=path, local=local, remote=none)

    if path == ServingPath.B2:
        remote = ResourceCost(
            net=p.t_l, gpu=p.K * p.t_tok_r, mem=p.t_l + p.K * p.t_tok_r
        )
        return PathCost(path=path, local=none, remote=remote)

    if path == ServingPath.P1_CACHED:
        local = ResourceCost(
            net=p.t_h,
            gpu=p.n_1 * p.t_tok,
            mem=p.t_h + (p.K / p.gamma) * p.t_tok_r,
        )
        return PathCost(path=path, local=local, remote=_p1_remote(p))

    if path == ServingPath.P1_STATELESS:
        return PathCost(path=path, local=_stateless_local(p, p.n_1), remote=_p1_remote(p))

    if path == ServingPath.P2_CACHED:
        local = ResourceCost(
            net=p.t_h,
            gpu=p.n_2 * p.t_tok,
            mem=p.t_h + p.n_draft * p.t_tok_r,
        )
        return PathCost(path=path, local=local, remote=_p2_remote(p))

    if path == ServingPath.P2_STATELESS:
        return PathCost(path=path, local=_stateless_local(p, p.n_2), remote=_p2_remote(p))

    raise ValueError(f"Unknown serving path: {path}")


def all_path_costs(
    params: InterParams, paths: Sequence[ServingPath] = tuple(ServingPath)
) -> List[PathCost]:
    return [path_costs(path, params) for path in paths]


def costs_table(costs: Sequence[PathCost]) -> Dict[str, List]:
    """Column-oriented view of path costs, for reports."""

    table = {
        "path": [],
        "local_net": [],
        "local_gpu": [],
        "local_mem": [],
        "remote_net": [],
        "remote_gpu": [],
        "remote_mem": [],
    }

    for cost in costs:
        table["path"].append(cost.path.value)

        for key, value in zip(list(table)[1:], cost.column()):
            table[key].append(value)

    return table
