"""Exploration-quality metrics package"""
from .architecture import (
    MaskSnapshot,
    SurvivalRecord,
    convergence_series,
    iou,
    snapshots_of,
    survival_rate,
)
from .report import ReportSummary, build_report, series_rows, summarize, write_series_csv

__all__ = [
    "MaskSnapshot",
    "ReportSummary",
    "SurvivalRecord",
    "build_report",
    "convergence_series",
    "iou",
    "series_rows",
    "snapshots_of",
    "summarize",
    "survival_rate",
    "write_series_csv",
]
