"""
Decision rules, metrics and report files.
"""
from .decisions import class_correct, decide_class, decide_reg, rmse
from .metrics import ATTACK_MODES, DeferralRecord, MetricReport, evaluate, summarize_reports
from .reports import REPORT_SCHEMA, emit_report, load_report, report_columns, reports_frame

__all__ = [
    "class_correct", "decide_class", "decide_reg", "rmse",
    "ATTACK_MODES", "DeferralRecord", "MetricReport", "evaluate", "summarize_reports",
    "REPORT_SCHEMA", "emit_report", "load_report", "report_columns", "reports_frame",
]
