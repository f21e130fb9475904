"""
Exploration-quality metrics from mask snapshots: architecture IoU and grown-item survival
"""

from typing import Dict, Iterable, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..audit.event_log import EventKind, EventRecord, SnapshotPhase
from ..errors import PhaseMismatchError, ShapeError


class MaskSnapshot(BaseModel):
    """Active-set bitset at step ``t`` of a run"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    t: int
    phase: SnapshotPhase
    bits: np.ndarray

    @property
    def active_count(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def from_record(cls, record: EventRecord) -> "MaskSnapshot":
        return cls(t=record.t, phase=record.phase, bits=record.bits())


class SurvivalRecord(BaseModel):
    """Items grown at step ``t`` and how many were still active after the next prune"""
    t: int
    grown: int
    survivors: int
    rate: float


def snapshots_of(records: Iterable[EventRecord], phase: SnapshotPhase) -> List[MaskSnapshot]:
    return [
        MaskSnapshot.from_record(r) for r in records
        if r.kind == EventKind.SNAPSHOT and r.phase == phase
    ]


def iou(a: MaskSnapshot, b: MaskSnapshot) -> float:
    """
    Intersection over union of two active sets.

    Args:
        a: First snapshot
        b: Second snapshot of the same phase

    Returns:
        ``|A & B| / |A | B|``; two empty sets count as identical

    Raises:
        PhaseMismatchError: snapshots come from different phases
    """
    if a.phase != b.phase:
        raise PhaseMismatchError(f"cannot compare a {a.phase.value} snapshot with a {b.phase.value} one")
    if a.bits.size != b.bits.size:
        raise ShapeError(f"snapshots cover {a.bits.size} and {b.bits.size} items")
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a.bits, b.bits).sum()) / union


def convergence_series(records: Iterable[EventRecord]) -> Dict[str, List[Tuple[int, float]]]:
    """
    IoU of consecutive same-phase snapshots.

    Returns:
        ``{"after-prune": [(t, iou), ...], "after-grow": [...]}`` where ``t``
        is the later snapshot's step
    """
    records = list(records)
    series: Dict[str, List[Tuple[int, float]]] = {}
    for phase in (SnapshotPhase.AFTER_PRUNE, SnapshotPhase.AFTER_GROW):
        snaps = snapshots_of(records, phase)
        series[phase.value] = [(b.t, iou(a, b)) for a, b in zip(snaps, snaps[1:])]
    return series


def survival_rate(records: Iterable[EventRecord]) -> List[SurvivalRecord]:
    """
    Share of each step's grown items still active after the following prune.

    The grown set of step ``t`` is the after-grow set minus the after-prune
    set of the same step. Steps without a later prune, or that grew nothing,
    are omitted.
    """
    records = list(records)
    pruned = {s.t: s for s in snapshots_of(records, SnapshotPhase.AFTER_PRUNE)}
    result: List[SurvivalRecord] = []
    for snap in snapshots_of(records, SnapshotPhase.AFTER_GROW):
        before, after = pruned.get(snap.t), pruned.get(snap.t + 1)
        if before is None or after is None:
            continue
        grown = snap.bits & ~before.bits
        count = int(grown.sum())
        if count == 0:
            continue
        survivors = int((grown & after.bits).sum())
        result.append(SurvivalRecord(t=snap.t, grown=count, survivors=survivors, rate=survivors / count))
    return result
