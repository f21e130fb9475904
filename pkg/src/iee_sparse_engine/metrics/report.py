"""
Per-log CSV series and summary JSON for one or more event logs
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from .architecture import convergence_series, survival_rate
from ..audit.event_log import EventKind, EventRecord, read_events, verify_records

SERIES_HEADER = ["t", "iou_prune", "iou_grow", "survival"]


class ReportSummary(BaseModel):
    """Headline numbers of one run"""
    log: str
    strategy: Optional[str] = None
    chain_valid: bool = True
    diverged: bool = False
    steps: int = 0
    mean_survival: Optional[float] = None
    iou_grow_first_quartile: Optional[float] = None
    iou_grow_last_quartile: Optional[float] = None
    final_accuracy: Optional[float] = None
    flops_total: Optional[float] = None
    flops_per_sample: Optional[float] = None


def series_rows(records: Sequence[EventRecord]) -> List[Dict[str, Any]]:
    """One row per step with the prune / grow IoU and the survival rate (None when undefined)."""
    series = convergence_series(records)
    prune = dict(series["after-prune"])
    grow = dict(series["after-grow"])
    survival = {r.t: r.rate for r in survival_rate(records)}
    steps = sorted(set(prune) | set(grow) | set(survival))
    return [
        {"t": t, "iou_prune": prune.get(t), "iou_grow": grow.get(t), "survival": survival.get(t)}
        for t in steps
    ]


def write_series_csv(rows: List[Dict[str, Any]], path: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SERIES_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if row[k] is None else row[k] for k in SERIES_HEADER})


def _quartile_means(values: List[float]):
    if not values:
        return None, None
    q = max(1, len(values) // 4)
    return float(np.mean(values[:q])), float(np.mean(values[-q:]))


def summarize(records: Sequence[EventRecord], log: str = "") -> ReportSummary:
    """
    Summary of one run's log.

    Args:
        records: Event records in order
        log: Label for the summary (usually the log path)

    Returns:
        Mean survival, first / last quartile after-grow IoU, final accuracy, FLOPs
    """
    grow_iou = [v for _, v in convergence_series(records)["after-grow"]]
    first, last = _quartile_means(grow_iou)
    survival = [r.rate for r in survival_rate(records)]
    summary = ReportSummary(
        log=log,
        chain_valid=verify_records(list(records)),
        steps=len(grow_iou) + (1 if grow_iou else 0),
        mean_survival=float(np.mean(survival)) if survival else None,
        iou_grow_first_quartile=first,
        iou_grow_last_quartile=last,
    )
    for record in records:
        if record.kind == EventKind.RUN_START:
            summary.strategy = record.data.get("strategy")
        elif record.kind == EventKind.DIVERGED:
            summary.diverged = True
        elif record.kind == EventKind.RUN_END:
            summary.final_accuracy = record.data.get("test_accuracy")
            summary.flops_total = record.data.get("flops_total")
            summary.flops_per_sample = record.data.get("flops_per_sample")
    return summary


def _series_name(path: Path, index: int) -> str:
    label = path.parent.name if path.stem == "events" and path.parent.name else path.stem
    return f"{index:02d}-{label}"


def build_report(log_paths: Sequence[str], out_dir: str) -> List[ReportSummary]:
    """
    Write ``<nn>-<run>.csv`` per log and ``summary.json`` for all of them.

    Args:
        log_paths: Event-log files
        out_dir: Output directory

    Returns:
        One summary per log, in input order
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = []
    for index, log_path in enumerate(log_paths):
        path = Path(log_path)
        records = list(read_events(str(path)))
        write_series_csv(series_rows(records), str(out / f"{_series_name(path, index)}.csv"))
        summaries.append(summarize(records, str(path)))
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump([s.model_dump(mode="json") for s in summaries], f, indent=2)
    return summaries
