"""Subcommand bodies; each returns (payload, tables, feasible)."""

import copy
import itertools
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import orjson
import polars as pl

from kvspec.analytics.compose import composed_accept_length
from kvspec.analytics.inter import InterParams, all_path_costs, costs_table
from kvspec.analytics.intra import (
    IntraGrids,
    IntraParams,
    b_max,
    baseline_throughput,
    optimize_intra,
    speedup_curve,
    sweep_intra,
    t_tok,
)
from kvspec.analytics.lp import Capacities, optimize_inter, optimize_inter_fixed_point
from kvspec.core.acceptance import gamma_fn
from kvspec.core.loader import config_document, load_config
from kvspec.core.models import Request, SystemConfig
from kvspec.enums import AnalyzeMode, Schedule
from kvspec.exceptions import ConfigError, InfeasibleError
from kvspec.sim.runner import compare_schedules, metrics_frame, simulate
from kvspec.specloop.kl import check_enumeration, cumulative_kl_profile
from kvspec.specloop.toy_model import perturbed_model, random_model

_logger = logging.getLogger(__name__)

Outcome = Tuple[Dict[str, Any], Dict[str, pl.DataFrame], bool]

KEY_ALIASES = {
    "x": "runtime.draft_length",
    "c": "scenario.compression_ratio",
    "B": "scenario.batch_size",
    "K": "scenario.output_tokens",
    "W": "runtime.lookahead_window",
}


def run_simulate(
    config: SystemConfig,
    workload: List[Request],
    schedule: Optional[Schedule],
    seed: Optional[int],
) -> Outcome:
    """`schedule=None` compares every long-context schedule."""

    if schedule is None:
        frame, results = compare_schedules(config, workload, seed)
        payload = {"runs": [m.summary() for m in results]}
        return payload, {"compare": frame}, all(m.feasible for m in results)

    metrics = simulate(config, workload, schedule, seed)
    payload = {"metrics": metrics.summary(), "latencies": metrics.latencies}
    return payload, {"simulate": metrics_frame([metrics])}, metrics.feasible


def _intra(config: SystemConfig) -> Outcome:
    params = IntraParams.from_config(config)
    grids = IntraGrids.from_config(config)
    gamma = gamma_fn(config.acceptance)
    batch_sizes = config.analysis.batch_sizes or [config.scenario.batch_size]
    tables = {
        "intra_sweep": pl.concat(
            [
                sweep_intra(params, b, gamma, grids).with_columns(pl.lit(b).alias("B"))
                for b in batch_sizes
            ]
        ),
        "speedup": speedup_curve(params, batch_sizes, gamma, grids),
    }
    payload: Dict[str, Any] = {
        "baseline_tok_s": baseline_throughput(params),
        "b_max": params.b_max,
    }

    try:
        best = optimize_intra(params, batch_sizes, gamma, grids)
    except InfeasibleError as ex:
        _logger.warning("Intra search found no feasible point: %s", ex)
        payload["infeasible"] = {"constraint": ex.constraint, "message": str(ex)}
        return payload, tables, False

    payload["optimum"] = {
        "B": best.batch_size,
        "B_c": best.knobs.offloaded_count,
        "x": best.knobs.draft_length,
        "c": best.knobs.compression,
        "l": best.knobs.cycles_per_load,
        "throughput_tok_s": best.throughput,
        "t_gpu_s": best.t_gpu,
        "t_xfer_s": best.t_xfer,
    }
    return payload, tables, True


def _inter(config: SystemConfig) -> Outcome:
    hw = config.hardware

    try:
        params = InterParams.from_config(config)
    except InfeasibleError as ex:
        return {"infeasible": {"constraint": ex.constraint, "message": str(ex)}}, {}, False

    capacities = Capacities(
        local_gpus=hw.local_gpus,
        remote_gpus=hw.remote_gpus,
        b_max=b_max(hw.gpu_mem, config.model.weights_bytes, config.kv_full_bytes),
    )
    paths = config.analysis.paths
    payload: Dict[str, Any] = {}

    if config.analysis.fixed_point:
        result = optimize_inter_fixed_point(
            params,
            capacities,
            weights_bytes=config.model.weights_bytes,
            bw_hbm=hw.hbm_bandwidth,
            paths=paths,
        )
        solution = result.solution
        costs = all_path_costs(
            params.with_occupancy(*_t_toks(config, result.occupancy_local, result.occupancy_remote)),
            paths,
        )
        payload["fixed_point"] = {
            "rounds": result.rounds,
            "converged": result.converged,
            "occupancy_local": result.occupancy_local,
            "occupancy_remote": result.occupancy_remote,
        }
    else:
        costs = all_path_costs(params, paths)
        solution = optimize_inter(costs, capacities, params.K)

    table = costs_table(costs)
    table["rate_req_s"] = [solution.rates[c.path] for c in costs]
    payload.update(
        {
            "throughput_tok_s": solution.throughput,
            "request_rate": solution.request_rate,
            "rates": {path.value: rate for path, rate in solution.rates.items()},
            "binding": solution.binding,
            "usage": solution.usage,
        }
    )
    return payload, {"inter": pl.DataFrame(table)}, True


def _t_toks(config: SystemConfig, local: float, remote: float) -> Tuple[float, float]:
    M, kv, bw = config.model.weights_bytes, config.kv_full_bytes, config.hardware.hbm_bandwidth
    return t_tok(M, local, kv, bw), t_tok(M, remote, kv, bw)


def _compose(config: SystemConfig) -> Outcome:
    analysis = config.analysis
    c = config.scenario.compression_ratio
    gamma = gamma_fn(config.acceptance)
    rows = {"x": [], "c": [], "d_e": [], "gamma": [], "gamma_e": [], "plain": [], "composed": []}

    for d_e, x in itertools.product(analysis.d_e, analysis.x_grid):
        g_e = analysis.gamma_e_for(d_e)

        if d_e > 1 and g_e is None:
            raise ConfigError(f"analysis.gamma_e has no entry for d_e={d_e}")

        g = gamma(x, c)
        rows["x"].append(x)
        rows["c"].append(c)
        rows["d_e"].append(d_e)
        rows["gamma"].append(g)
        rows["gamma_e"].append(g_e)
        rows["plain"].append(g * x)
        rows["composed"].append(composed_accept_length(x, c, d_e, gamma, g_e))

    frame = pl.DataFrame(
        rows,
        schema={
            "x": pl.Int64,
            "c": pl.Float64,
            "d_e": pl.Int64,
            "gamma": pl.Float64,
            "gamma_e": pl.Float64,
            "plain": pl.Float64,
            "composed": pl.Float64,
        },
    )
    return {"rows": frame.height}, {"compose": frame}, True


def run_analyze(config: SystemConfig, mode: AnalyzeMode) -> Outcome:
    handlers = {
        AnalyzeMode.INTRA: _intra,
        AnalyzeMode.INTER: _inter,
        AnalyzeMode.COMPOSE: _compose,
    }

    return handlers[mode](config)


def _parse_value(raw: str) -> Any:
    try:
        return orjson.loads(raw)
    except orjson.JSONDecodeError:
        return raw


def parse_vary(specs: Sequence[str]) -> Dict[str, List[Any]]:
    """`key=a,b,c` flags into an ordered mapping of key to values."""

    varied: Dict[str, List[Any]] = {}

    for spec in specs:
        key, sep, values = spec.partition("=")

        if not sep or not key or not values:
            raise ConfigError(f"--vary expects key=a,b,c, got {spec!r}")

        varied[key.strip()] = [_parse_value(v.strip()) for v in values.split(",")]

    return varied


def resolve_key(doc: Dict[str, Any], key: str) -> Tuple[str, str]:
    """Map a bare or dotted key to (section, field) of the configuration document."""

    key = KEY_ALIASES.get(key, key)

    if "." in key:
        section, _, field = key.partition(".")

        if not isinstance(doc.get(section), dict) or field not in doc[section]:
            raise ConfigError(f"Unknown configuration key: {key}")

        return section, field

    owners = [name for name, body in doc.items() if isinstance(body, dict) and key in body]

    if not owners:
        raise ConfigError(f"Unknown configuration key: {key}")

    if len(owners) > 1:
        raise ConfigError(f"Ambiguous key {key}: found in {owners}, use section.{key}")

    return owners[0], key


def sweep_points(config: SystemConfig, varied: Dict[str, List[Any]]):
    """Yield (assignment, config) over the cross product of varied values."""

    doc = config_document(config)
    targets = {key: resolve_key(doc, key) for key in varied}

    for values in itertools.product(*varied.values()):
        point = copy.deepcopy(doc)
        assignment = dict(zip(varied, values))

        for key, value in assignment.items():
            section, field = targets[key]
            point[section][field] = value

        yield assignment, load_config(orjson.dumps(point))


def run_sweep(
    config: SystemConfig,
    varied: Dict[str, List[Any]],
    workload_for,
    schedule: Schedule,
    seed: Optional[int],
    mode: Optional[AnalyzeMode] = None,
) -> Outcome:
    """One simulation (or intra optimization with mode=intra) per sweep point."""

    rows = []
    feasible = True

    for assignment, point in sweep_points(config, varied):
        _logger.info("Sweep point %s", assignment)

        if mode == AnalyzeMode.INTRA:
            payload, _, ok = _intra(point)
            optimum = payload.get("optimum", {})
            row = {"throughput_tok_s": optimum.get("throughput_tok_s"), "feasible": ok}
        else:
            metrics = simulate(point, workload_for(point), schedule, seed)
            row = {**metrics.csv_row(), "feasible": metrics.feasible}
            ok = metrics.feasible

        feasible = feasible and ok
        rows.append({**{k: _cell(v) for k, v in assignment.items()}, **row})

    frame = pl.DataFrame(rows)
    return {"points": len(rows), "varied": varied}, {"sweep": frame}, feasible


def _cell(value: Any) -> Any:
    return orjson.dumps(value).decode() if isinstance(value, (dict, list)) else value


def run_kl_demo(vocab: int, T: int, perturbation: float, seed: int) -> Outcome:
    check_enumeration(vocab, T)
    rng = np.random.default_rng(seed)
    full = random_model(vocab, T, rng)
    lossy = perturbed_model(full, perturbation, rng)
    profile = cumulative_kl_profile(full, lossy, T)
    gap = float((profile["kl_direct"] - profile["kl_chain"]).abs().max())

    payload = {
        "vocab": vocab,
        "T": T,
        "perturbation": perturbation,
        "final_kl": float(profile["kl_chain"][-1]),
        "max_method_gap": gap,
    }
    return payload, {"kl": profile}, True
