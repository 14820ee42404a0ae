"""
Throughput linear program over the serving paths.

    max K * sum(n)   s.t.   A n <= b,  n >= 0

with one column of per-request costs per path and the six pool capacities
as b. Every cost is non-negative and every capacity is non-negative, so the
origin is a basic feasible solution and a single-phase tableau simplex with
Bland's rule reaches the optimal vertex.
"""

import dataclasses
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from kvspec.analytics.inter import InterParams, PathCost, all_path_costs
from kvspec.analytics.intra import t_tok
from kvspec.config import get_settings
from kvspec.enums import ServingPath
from kvspec.exceptions import ContractError, UnboundedLPError

_logger = logging.getLogger(__name__)

CONSTRAINTS = (
    "local_net",
    "local_gpu",
    "local_mem",
    "remote_net",
    "remote_gpu",
    "remote_mem",
)

_PIVOT_TOL = 1e-12
_BINDING_TOL = 1e-9


@dataclasses.dataclass(frozen=True)
class Capacities:
    local_gpus: int
    remote_gpus: int
    b_max: int

    def vector(self) -> np.ndarray:
        return np.array(
            [
                self.local_gpus,
                self.local_gpus,
                self.local_gpus * self.b_max,
                self.remote_gpus,
                self.remote_gpus,
                self.remote_gpus * self.b_max,
            ],
            dtype=np.float64,
        )

    def scaled(self, factor: int) -> "Capacities":
        return Capacities(
            local_gpus=self.local_gpus * factor,
            remote_gpus=self.remote_gpus * factor,
            b_max=self.b_max,
        )


@dataclasses.dataclass(frozen=True)
class LPSolution:
    rates: Dict[ServingPath, float]
    throughput: float
    binding: List[str]
    usage: Dict[str, float]

    @property
    def request_rate(self) -> float:
        return math.fsum(self.rates.values())


def cost_matrix(costs: Sequence[PathCost]) -> np.ndarray:
    """Rows follow CONSTRAINTS, columns follow `costs`."""

    return np.array([cost.column() for cost in costs], dtype=np.float64).T


def _entering(tableau: np.ndarray) -> Optional[int]:
    # Smallest index with a positive reduced profit (Bland)
    candidates = np.flatnonzero(tableau[-1, :-1] > _PIVOT_TOL)
    return int(candidates[0]) if candidates.size else None


def _leaving(tableau: np.ndarray, col: int, basis: List[int]) -> Optional[int]:
    column = tableau[:-1, col]
    rhs = tableau[:-1, -1]
    best: Optional[Tuple[float, int, int]] = None

    for row in np.flatnonzero(column > _PIVOT_TOL):
        key = (rhs[row] / column[row], basis[row], int(row))
        if best is None or key[:2] < best[:2]:
            best = key

    return None if best is None else best[2]


def _pivot(tableau: np.ndarray, row: int, col: int):
    tableau[row] /= tableau[row, col]

    for other in range(tableau.shape[0]):
        if other != row and tableau[other, col] != 0.0:
            tableau[other] -= tableau[other, col] * tableau[row]


def solve_max(
    A: np.ndarray, b: np.ndarray, objective: np.ndarray, max_pivots: int = 10_000
) -> np.ndarray:
    """Maximize objective.n subject to A n <= b, n >= 0, with b >= 0.

    Raises UnboundedLPError naming the column index when the objective can
    grow without limit.
    """

    m, n = A.shape

    if np.any(b < 0):
        raise ContractError("capacities must be >= 0")

    tableau = np.zeros((m + 1, n + m + 1), dtype=np.float64)
    tableau[:m, :n] = A
    tableau[:m, n : n + m] = np.eye(m)
    tableau[:m, -1] = b
    tableau[-1, :n] = objective
    basis = list(range(n, n + m))

    for _ in range(max_pivots):
        col = _entering(tableau)

        if col is None:
            break

        row = _leaving(tableau, col, basis)

        if row is None:
            raise UnboundedLPError(str(col))

        _pivot(tableau, row, col)
        basis[row] = col
    else:
        raise ContractError("simplex did not terminate")

    solution = np.zeros(n + m, dtype=np.float64)

    for row, var in enumerate(basis):
        solution[var] = tableau[row, -1]

    return np.clip(solution[:n], 0.0, None)


def optimize_inter(
    costs: Sequence[PathCost], capacities: Capacities, K: int
) -> LPSolution:
    if not costs:
        raise ContractError("no serving paths given")

    A = cost_matrix(costs)

    if not np.all(np.isfinite(A)) or np.any(A < 0):
        raise ContractError("path costs must be finite and >= 0")

    for idx, cost in enumerate(costs):
        if not np.any(A[:, idx] > 0):
            raise UnboundedLPError(cost.path.value)

    b = capacities.vector()

    try:
        rates = solve_max(A, b, np.ones(len(costs), dtype=np.float64))
    except UnboundedLPError as ex:
        raise UnboundedLPError(costs[int(ex.path)].path.value) from ex

    used = A @ rates
    slack_tol = _BINDING_TOL * np.maximum(1.0, b)
    binding = [
        name
        for name, u, cap, tol in zip(CONSTRAINTS, used, b, slack_tol)
        if cap - u <= tol
    ]

    solution = LPSolution(
        rates={cost.path: float(rate) for cost, rate in zip(costs, rates)},
        throughput=K * math.fsum(rates),
        binding=binding,
        usage=dict(zip(CONSTRAINTS, map(float, used))),
    )

    _logger.debug(
        "LP optimum %.6g tok/s, binding=%s, rates=%s",
        solution.throughput,
        binding,
        {path.value: rate for path, rate in solution.rates.items()},
    )

    return solution


@dataclasses.dataclass(frozen=True)
class FixedPointResult:
    solution: LPSolution
    occupancy_local: float
    occupancy_remote: float
    rounds: int
    converged: bool


def implied_occupancy(
    solution: LPSolution, costs: Sequence[PathCost], capacities: Capacities
) -> Tuple[float, float]:
    """Mean busy slots per GPU by Little's law, clamped to [1, B_max]."""

    def clamp(value: float) -> float:
        return min(max(value, 1.0), float(capacities.b_max))

    local = math.fsum(solution.rates[c.path] * c.local.mem for c in costs)
    remote = math.fsum(solution.rates[c.path] * c.remote.mem for c in costs)
    per_local = local / capacities.local_gpus if capacities.local_gpus else capacities.b_max
    per_remote = remote / capacities.remote_gpus if capacities.remote_gpus else capacities.b_max
    return clamp(per_local), clamp(per_remote)


def optimize_inter_fixed_point(
    params: InterParams,
    capacities: Capacities,
    weights_bytes: float,
    bw_hbm: float,
    paths: Sequence[ServingPath] = tuple(ServingPath),
    max_rounds: Optional[int] = None,
    tol: float = 1e-6,
) -> FixedPointResult:
    """Re-solve with T_tok at the occupancies the previous solution implies."""

    max_rounds = max_rounds or get_settings().max_fixed_point_rounds

    if capacities.b_max < 1:
        raise ContractError("B_max must be >= 1")

    occ_local = occ_remote = float(capacities.b_max)
    solution = None

    for rounds in range(1, max_rounds + 1):
        current = params.with_occupancy(
            t_tok(weights_bytes, occ_local, params.kv_full, bw_hbm),
            t_tok(weights_bytes, occ_remote, params.kv_full, bw_hbm),
        )
        costs = all_path_costs(current, paths)
        solution = optimize_inter(costs, capacities, params.K)
        new_local, new_remote = implied_occupancy(solution, costs, capacities)

        if math.isclose(new_local, occ_local, rel_tol=tol) and math.isclose(
            new_remote, occ_remote, rel_tol=tol
        ):
            _logger.info("Occupancy fixed point reached after %s rounds", rounds)
            return FixedPointResult(solution, occ_local, occ_remote, rounds, True)

        occ_local, occ_remote = new_local, new_remote

    _logger.warning("Occupancy fixed point not reached after %s rounds", max_rounds)
    return FixedPointResult(solution, occ_local, occ_remote, max_rounds, False)
