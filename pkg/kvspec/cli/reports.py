import logging
import os
from typing import Dict, Optional

import orjson
import polars as pl

from kvspec.cli.models import RunReport

_logger = logging.getLogger(__name__)

REPORT_FILENAME = "report.json"

_JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def _default(obj):
    if hasattr(obj, "dict"):
        return obj.dict()

    raise TypeError(f"Type is not JSON serializable: {type(obj).__name__}")


def report_bytes(report: RunReport) -> bytes:
    return orjson.dumps(report.dict(), default=_default, option=_JSON_OPTIONS)


def write_outputs(
    out_dir: Optional[str],
    report: RunReport,
    tables: Dict[str, pl.DataFrame],
) -> RunReport:
    """Write each table as `<name>.csv` and the report as report.json under `out_dir`."""

    if out_dir is None:
        return report

    os.makedirs(out_dir, exist_ok=True)
    written = []

    for name, frame in tables.items():
        path = os.path.join(out_dir, f"{name}.csv")
        frame.write_csv(path)
        written.append(path)
        _logger.info("Wrote %s rows to %s", frame.height, path)

    report = report.copy(update={"outputs": written})
    path = os.path.join(out_dir, REPORT_FILENAME)

    with open(path, "wb") as fh:
        fh.write(report_bytes(report))

    _logger.info("Wrote report to %s", path)
    return report
