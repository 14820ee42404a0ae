import itertools
import logging

import numpy as np
import pytest

from kvspec.analytics.inter import InterParams, PathCost, ResourceCost, all_path_costs, path_costs
from kvspec.analytics.lp import (
    CONSTRAINTS,
    Capacities,
    cost_matrix,
    implied_occupancy,
    optimize_inter,
    optimize_inter_fixed_point,
    solve_max,
)
from kvspec.enums import ServingPath
from kvspec.exceptions import ContractError, UnboundedLPError
from tests.utils import KV_FULL, WEIGHTS, remote_prefix_config

_logger = logging.getLogger(__name__)

_CAPACITIES = Capacities(local_gpus=2, remote_gpus=4, b_max=7)


def _params(**overrides) -> InterParams:
    values = dict(
        K=240, x=30, gamma=0.8, c=0.25, kv_full=KV_FULL, bw_h=100e9, bw_l=10e9, t_tok=0.01
    )
    values.update(overrides)
    return InterParams(**values)


def _vertex_optimum(A: np.ndarray, b: np.ndarray) -> float:
    """Best objective over every basic feasible point of A n <= b, n >= 0."""

    m, n = A.shape
    rows = np.vstack([A, -np.eye(n)])
    rhs = np.concatenate([b, np.zeros(n)])
    best = 0.0

    for active in itertools.combinations(range(m + n), n):
        system = rows[list(active)]

        if abs(np.linalg.det(system)) < 1e-12:
            continue

        point = np.linalg.solve(system, rhs[list(active)])

        if np.all(point >= -1e-9) and np.all(A @ point <= b * (1 + 1e-9) + 1e-12):
            best = max(best, float(point.sum()))

    return best


def _assert_feasible(solution, costs, capacities):
    A = cost_matrix(costs)
    rates = np.array([solution.rates[c.path] for c in costs])
    b = capacities.vector()

    assert np.all(rates >= 0)
    assert np.all(A @ rates <= b * (1 + 1e-9) + 1e-12)


def test_single_path_closed_form():
    p = _params()
    b1 = path_costs(ServingPath.B1, p)
    capacities = Capacities(local_gpus=3, remote_gpus=0, b_max=7)

    solution = optimize_inter([b1], capacities, p.K)

    expected = p.K * min(3 / b1.local.net, 3 / b1.local.gpu, 3 * 7 / b1.local.mem)
    assert solution.throughput == pytest.approx(expected, rel=1e-9)
    assert "local_gpu" in solution.binding
    assert "local_net" not in solution.binding


def test_all_paths_are_feasible_and_report_binding_constraints():
    costs = all_path_costs(_params())
    solution = optimize_inter(costs, _CAPACITIES, 240)

    _assert_feasible(solution, costs, _CAPACITIES)
    assert solution.binding
    assert set(solution.binding) <= set(CONSTRAINTS)
    assert solution.throughput == pytest.approx(240 * solution.request_rate)
    assert set(solution.usage) == set(CONSTRAINTS)


def test_without_remote_gpus_only_b1_runs():
    costs = all_path_costs(_params())
    capacities = Capacities(local_gpus=2, remote_gpus=0, b_max=7)
    solution = optimize_inter(costs, capacities, 240)

    assert solution.rates[ServingPath.B1] > 0
    for path, rate in solution.rates.items():
        if path != ServingPath.B1:
            assert rate == pytest.approx(0.0, abs=1e-12)


def test_doubling_capacities_doubles_throughput():
    costs = all_path_costs(_params())

    single = optimize_inter(costs, _CAPACITIES, 240)
    double = optimize_inter(costs, _CAPACITIES.scaled(2), 240)

    assert double.throughput == pytest.approx(2 * single.throughput, rel=1e-9)


def test_unit_ratio_gives_no_speculative_advantage():
    p = _params(c=1.0, gamma=1.0)
    everything = optimize_inter(all_path_costs(p), _CAPACITIES, 240)
    baseline = optimize_inter(
        all_path_costs(p, [ServingPath.B1, ServingPath.B2]), _CAPACITIES, 240
    )

    assert everything.throughput == pytest.approx(baseline.throughput, rel=1e-9)


def test_zero_cost_path_is_unbounded():
    free = PathCost(path=ServingPath.P2_CACHED, local=ResourceCost(), remote=ResourceCost())

    with pytest.raises(UnboundedLPError) as info:
        optimize_inter([path_costs(ServingPath.B1, _params()), free], _CAPACITIES, 240)

    assert info.value.path == ServingPath.P2_CACHED.value


def test_contract_errors():
    with pytest.raises(ContractError):
        optimize_inter([], _CAPACITIES, 240)

    with pytest.raises(ContractError):
        solve_max(np.ones((1, 1)), np.array([-1.0]), np.ones(1))


def test_simplex_matches_vertex_enumeration():
    rng = np.random.default_rng(17)

    for _ in range(100):
        A = rng.uniform(0.05, 2.0, size=(6, 6))
        A[rng.random((6, 6)) < 0.3] = 0.0

        # every path keeps at least one positive cost
        for col in range(6):
            if not A[:, col].any():
                A[rng.integers(6), col] = rng.uniform(0.05, 2.0)

        b = rng.uniform(0.5, 10.0, size=6)
        rates = solve_max(A, b, np.ones(6))

        assert np.all(rates >= 0)
        assert np.all(A @ rates <= b * (1 + 1e-9) + 1e-12)
        assert rates.sum() == pytest.approx(_vertex_optimum(A, b), rel=1e-9)


def test_degenerate_ties_terminate():
    A = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    b = np.array([1.0, 1.0, 0.0])

    rates = solve_max(A, b, np.ones(3))
    assert rates.sum() == pytest.approx(1.0)
    assert rates[2] == 0.0


def test_fixed_point_loop():
    config = remote_prefix_config()
    params = InterParams.from_config(config)
    capacities = Capacities(local_gpus=1, remote_gpus=1, b_max=7)

    result = optimize_inter_fixed_point(params, capacities, WEIGHTS, 2e12)

    assert 1 <= result.rounds <= 50
    assert 1.0 <= result.occupancy_local <= 7.0
    assert 1.0 <= result.occupancy_remote <= 7.0
    assert result.solution.throughput > 0

    costs = all_path_costs(params)
    solution = optimize_inter(costs, capacities, params.K)
    local, remote = implied_occupancy(solution, costs, capacities)
    assert 1.0 <= local <= 7.0 and 1.0 <= remote <= 7.0


def test_fixed_point_respects_round_limit():
    params = InterParams.from_config(remote_prefix_config())
    capacities = Capacities(local_gpus=1, remote_gpus=1, b_max=7)

    result = optimize_inter_fixed_point(params, capacities, WEIGHTS, 2e12, max_rounds=1)

    assert result.rounds == 1
