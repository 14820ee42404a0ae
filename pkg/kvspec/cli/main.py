import argparse
import datetime
import hashlib
import logging
import sys
import time
from typing import List, Optional

import orjson

from kvspec.cli.commands import (
    parse_vary,
    run_analyze,
    run_kl_demo,
    run_simulate,
    run_sweep,
)
from kvspec.cli.models import RunReport
from kvspec.cli.reports import write_outputs
from kvspec.config import get_settings
from kvspec.core.loader import config_digest, load_config_file
from kvspec.core.workload import load_trace, workload_from_config
from kvspec.enums import AnalyzeMode, Schedule
from kvspec.exceptions import KVSpecError

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2

_ALL_SCHEDULES = "all"


def _add_out(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--out",
        type=str,
        default=None,
        help="Directory for report.json and the CSV tables.",
    )


def _add_seed(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Random seed (defaults to runtime.seed of the configuration).",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvspec",
        description="Simulate and analyze speculative decoding with compressed-KV drafting.",
    )

    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate = subparsers.add_parser("simulate", help="Run the serving simulator.")
    simulate.add_argument("config", type=str, help="JSON configuration document.")
    simulate.add_argument("--trace", type=str, default=None, help="CSV workload trace.")
    simulate.add_argument(
        "--schedule",
        type=str,
        choices=[s.value for s in Schedule] + [_ALL_SCHEDULES],
        default=Schedule.STAGGERED.value,
        help="Schedule to simulate; 'all' compares the long-context schedules.",
    )
    _add_seed(simulate)
    _add_out(simulate)

    analyze = subparsers.add_parser("analyze", help="Evaluate the closed-form models.")
    analyze.add_argument("config", type=str, help="JSON configuration document.")
    analyze.add_argument(
        "--mode",
        type=str,
        choices=[m.value for m in AnalyzeMode],
        default=AnalyzeMode.INTRA.value,
    )
    _add_out(analyze)

    sweep = subparsers.add_parser("sweep", help="Cross-product parameter sweep.")
    sweep.add_argument("config", type=str, help="JSON configuration document.")
    sweep.add_argument(
        "--vary",
        action="append",
        default=[],
        metavar="KEY=A,B,C",
        help="Configuration key and values; repeat for a cross product.",
    )
    sweep.add_argument("--trace", type=str, default=None, help="CSV workload trace.")
    sweep.add_argument(
        "--schedule",
        type=str,
        choices=[s.value for s in Schedule],
        default=Schedule.STAGGERED.value,
    )
    sweep.add_argument(
        "--mode",
        type=str,
        choices=["simulate", AnalyzeMode.INTRA.value],
        default="simulate",
        help="Simulate every point, or run the intra optimizer on it.",
    )
    _add_seed(sweep)
    _add_out(sweep)

    kl_demo = subparsers.add_parser("kl-demo", help="Sequence-level KL on toy models.")
    kl_demo.add_argument("--vocab", type=int, default=4)
    kl_demo.add_argument("--T", type=int, default=6)
    kl_demo.add_argument("--perturbation", type=float, default=0.1)
    kl_demo.add_argument("--seed", type=int, default=None)
    _add_out(kl_demo)

    return parser


def _args_digest(args: argparse.Namespace) -> str:
    return hashlib.sha256(orjson.dumps(vars(args), option=orjson.OPT_SORT_KEYS)).hexdigest()


def _workload(config, trace: Optional[str]):
    return load_trace(trace) if trace else workload_from_config(config)


def _dispatch(args: argparse.Namespace) -> RunReport:
    started = time.perf_counter()
    settings = get_settings()

    if args.command == "kl-demo":
        seed = settings.default_seed if args.seed is None else args.seed
        payload, tables, feasible = run_kl_demo(args.vocab, args.T, args.perturbation, seed)
        digest = _args_digest(args)
    else:
        config = load_config_file(args.config)
        digest = config_digest(config)
        seed = getattr(args, "seed", None)
        seed = config.runtime.seed if seed is None else seed

        if args.command == "simulate":
            schedule = None if args.schedule == _ALL_SCHEDULES else Schedule(args.schedule)
            payload, tables, feasible = run_simulate(
                config, _workload(config, args.trace), schedule, seed
            )
        elif args.command == "analyze":
            payload, tables, feasible = run_analyze(config, AnalyzeMode(args.mode))
        else:
            trace = load_trace(args.trace) if args.trace else None
            payload, tables, feasible = run_sweep(
                config,
                parse_vary(args.vary),
                (lambda point: trace) if trace else workload_from_config,
                Schedule(args.schedule),
                seed,
                mode=AnalyzeMode.INTRA if args.mode == AnalyzeMode.INTRA.value else None,
            )

    report = RunReport(
        subcommand=args.command,
        config_digest=digest,
        seed=seed,
        feasible=feasible,
        payload=payload,
        runtime_s=time.perf_counter() - started,
        created_at=datetime.datetime.now(datetime.timezone.utc),
    )

    return write_outputs(args.out, report, tables)


def _summary(report: RunReport) -> str:
    payload = report.payload
    metrics = payload.get("metrics") or payload.get("optimum") or payload
    value = metrics.get("throughput", metrics.get("throughput_tok_s"))
    parts = [report.subcommand, f"feasible={str(report.feasible).lower()}"]

    if value is not None:
        parts.append(f"throughput_tok_s={value:.6g}")

    if report.outputs:
        parts.append(f"outputs={len(report.outputs) + 1}")

    return " ".join(parts)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()

    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return EXIT_OK if ex.code in (0, None) else EXIT_USAGE

    try:
        report = _dispatch(args)
    except FileNotFoundError as ex:
        _logger.error("%s", ex)
        return EXIT_USAGE
    except (KVSpecError, ValueError) as ex:
        _logger.error("%s: %s", type(ex).__name__, ex)
        return EXIT_USAGE
    except Exception as ex:
        _logger.error("Internal error: %s", ex)
        _logger.debug("Traceback", exc_info=ex)
        return EXIT_INTERNAL

    print(_summary(report))
    return EXIT_OK


def run():
    sys.exit(main())
