"""
Metric report files: a full JSON document and a flat one-row CSV.
"""
import json
import logging
import os
from typing import Dict, List, Tuple

import pandas as pd

from deferkit.errors import DataFormatError
from deferkit.evaluation.metrics import MetricReport

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "deferkit-report-v1"
BASE_COLUMNS = ["run_id", "task", "attack_mode", "nu", "c_metric", "u_metric", "t_metric",
                "def_loss", "defer_rate_pred"]


def report_columns(num_experts: int) -> List[str]:
    """CSV header: run_id, task, attack_mode, nu, c/u/t metrics, def_loss, defer_rate_pred, defer_rate_e1..eJ."""
    return BASE_COLUMNS + [f"defer_rate_e{e}" for e in range(1, num_experts + 1)]


def report_row(report: MetricReport) -> Dict:
    num_experts = sum(1 for key in report.deferral_rate if key.startswith("e"))
    row = {
        "run_id": report.config_hash,
        "task": report.task,
        "attack_mode": report.attack_mode,
        "nu": report.nu,
        "c_metric": report.c_metric,
        "u_metric": report.u_metric,
        "t_metric": report.t_metric,
        "def_loss": report.def_loss,
        "defer_rate_pred": report.deferral_rate.get("pred"),
    }
    for e in range(1, num_experts + 1):
        row[f"defer_rate_e{e}"] = report.deferral_rate.get(f"e{e}")
    return row


def _paths(path: str) -> Tuple[str, str]:
    stem = path[:-5] if path.endswith(".json") else path[:-4] if path.endswith(".csv") else path
    return f"{stem}.json", f"{stem}.csv"


def emit_report(report: MetricReport, path: str) -> Tuple[str, str]:
    """
    Write ``<stem>.json`` and ``<stem>.csv`` for a report.

    Args:
        report (MetricReport): Report to save
        path (str): Target path; a .json or .csv suffix is replaced

    Returns:
        Tuple[str, str]: Paths of the JSON and CSV files
    """
    json_path, csv_path = _paths(path)
    directory = os.path.dirname(json_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    try:
        with open(json_path, "w") as f:
            json.dump({"schema": REPORT_SCHEMA, "report": report.model_dump()}, f, indent=2, sort_keys=True)
        row = report_row(report)
        frame = pd.DataFrame([row], columns=report_columns(len(row) - len(BASE_COLUMNS)))
        with open(csv_path, "w") as f:
            f.write(f"# config_hash={report.config_hash}\n")
            frame.to_csv(f, index=False)
    except OSError as e:
        logger.error(f"Could not write report to {path}: {e}")
        raise

    logger.info(f"Report saved to: {json_path}, {csv_path}")
    return json_path, csv_path


def load_report(path: str) -> MetricReport:
    """Read a report JSON written by ``emit_report``."""
    with open(path, "r") as f:
        document = json.load(f)
    if document.get("schema") != REPORT_SCHEMA:
        raise DataFormatError(f"{path} is not a {REPORT_SCHEMA} document")
    return MetricReport.model_validate(document["report"])


def reports_frame(reports: List[MetricReport]) -> pd.DataFrame:
    """Stack several reports into one plot-ready table."""
    rows = [report_row(r) for r in reports]
    width = max((len(r) - len(BASE_COLUMNS) for r in rows), default=0)
    return pd.DataFrame(rows, columns=report_columns(width))
