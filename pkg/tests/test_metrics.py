"""
Tests for architecture IoU, grown-item survival, and run reports
"""

import json
import os

import numpy as np
import pytest

from iee_sparse_engine.audit.event_log import EventKind, EventLog, SnapshotPhase, pack_bits
from iee_sparse_engine.errors import PhaseMismatchError
from iee_sparse_engine.metrics.architecture import MaskSnapshot, convergence_series, iou, survival_rate
from iee_sparse_engine.metrics.report import build_report, series_rows, summarize


def _bits(text):
    return np.array([c == "1" for c in text])


def _emit_snapshots(log):
    """Two cycles on 8 items: 4 grown at t = 0, 3 of them survive the next prune"""
    for t, phase, text in [
        (0, SnapshotPhase.AFTER_PRUNE, "11000000"),
        (0, SnapshotPhase.AFTER_GROW, "11111100"),
        (1, SnapshotPhase.AFTER_PRUNE, "01111000"),
        (1, SnapshotPhase.AFTER_GROW, "01111011"),
    ]:
        log.emit(EventKind.SNAPSHOT, t=t, phase=phase, snapshot=pack_bits(_bits(text)), snapshot_size=8)
    return log


class TestIoU:
    """Intersection over union of active sets"""

    def test_half_overlap(self):
        """{0,1,2,3} vs {2,3,4,5}: 2 / 6; {1..4} vs {0..7}: 0.5"""
        a = MaskSnapshot(t=0, phase=SnapshotPhase.AFTER_GROW, bits=_bits("11110000"))
        b = MaskSnapshot(t=1, phase=SnapshotPhase.AFTER_GROW, bits=_bits("00111100"))
        assert iou(a, b) == pytest.approx(2 / 6)
        c = MaskSnapshot(t=0, phase=SnapshotPhase.AFTER_GROW, bits=_bits("01111000"))
        d = MaskSnapshot(t=1, phase=SnapshotPhase.AFTER_GROW, bits=_bits("11111111"))
        assert iou(c, d) == pytest.approx(0.5)

    def test_empty_sets_are_identical(self):
        """Two empty active sets give 1.0"""
        empty = MaskSnapshot(t=0, phase=SnapshotPhase.AFTER_PRUNE, bits=np.zeros(4, dtype=bool))
        assert iou(empty, empty) == 1.0

    def test_phase_mismatch(self):
        """Snapshots from different phases cannot be compared"""
        a = MaskSnapshot(t=0, phase=SnapshotPhase.AFTER_PRUNE, bits=_bits("1100"))
        b = MaskSnapshot(t=0, phase=SnapshotPhase.AFTER_GROW, bits=_bits("1100"))
        with pytest.raises(PhaseMismatchError):
            iou(a, b)


class TestSeries:
    """Per-step series from event records"""

    def test_convergence_series(self):
        """Consecutive same-phase snapshots give one IoU per later step"""
        series = convergence_series(_emit_snapshots(EventLog()).records)
        assert series["after-prune"] == [(1, pytest.approx(0.2))]
        assert series["after-grow"] == [(1, pytest.approx(0.5))]

    def test_survival(self):
        """Three of four grown items are still active after the next prune"""
        records = survival_rate(_emit_snapshots(EventLog()).records)
        assert len(records) == 1
        assert (records[0].t, records[0].grown, records[0].survivors) == (0, 4, 3)
        assert records[0].rate == pytest.approx(0.75)

    def test_series_rows(self):
        """Rows merge both IoU series with survival"""
        rows = series_rows(_emit_snapshots(EventLog()).records)
        assert [r["t"] for r in rows] == [0, 1]
        assert rows[0]["survival"] == pytest.approx(0.75)
        assert rows[0]["iou_grow"] is None
        assert rows[1]["iou_grow"] == pytest.approx(0.5)


class TestReport:
    """Summaries and report files"""

    def test_summarize(self):
        """The summary carries survival, IoU quartiles, and run-end metrics"""
        log = EventLog()
        log.emit(EventKind.RUN_START, data={"strategy": "iee"})
        _emit_snapshots(log)
        log.emit(EventKind.RUN_END, data={"test_accuracy": 0.9, "flops_total": 100.0, "flops_per_sample": 2.0})
        summary = summarize(log.records, "run")
        assert summary.strategy == "iee"
        assert summary.chain_valid
        assert summary.steps == 2
        assert summary.mean_survival == pytest.approx(0.75)
        assert summary.iou_grow_first_quartile == pytest.approx(0.5)
        assert summary.final_accuracy == 0.9
        assert not summary.diverged

    def test_build_report(self, temp_dir):
        """One CSV per log and a summary.json"""
        path = os.path.join(temp_dir, "run", "events.jsonl")
        _emit_snapshots(EventLog(path))
        out = os.path.join(temp_dir, "report")
        summaries = build_report([path], out)
        assert len(summaries) == 1
        assert os.path.exists(os.path.join(out, "00-run.csv"))
        with open(os.path.join(out, "summary.json"), encoding="utf-8") as f:
            data = json.load(f)
        assert data[0]["mean_survival"] == pytest.approx(0.75)
        with open(os.path.join(out, "00-run.csv"), encoding="utf-8") as f:
            assert f.readline().strip() == "t,iou_prune,iou_grow,survival"
