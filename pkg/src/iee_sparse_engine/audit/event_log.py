"""
Append-only JSONL event log with a BLAKE3 hash chain
"""

import base64
import json
import logging
import os
import threading
import zlib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

import blake3
import numpy as np
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    """Kinds of event records"""
    RUN_START = "run-start"
    ITERATION = "iteration"
    STAGE = "stage"
    PRUNE = "prune"
    GROW = "grow"
    SNAPSHOT = "snapshot"
    IMPORTANCE = "importance"
    WARNING = "warning"
    DIVERGED = "diverged"
    CHECKPOINT = "checkpoint"
    RUN_END = "run-end"


class SnapshotPhase(str, Enum):
    """When a mask snapshot was taken within a cycle"""
    INIT = "init"
    AFTER_PRUNE = "after-prune"
    AFTER_GROW = "after-grow"


def pack_bits(bits: np.ndarray) -> str:
    """Bit-pack (little-endian bit order), deflate and base64 a flat boolean array."""
    packed = np.packbits(np.asarray(bits, dtype=bool).reshape(-1), bitorder="little")
    return base64.b64encode(zlib.compress(packed.tobytes(), 9)).decode("ascii")


def unpack_bits(payload: str, size: int) -> np.ndarray:
    packed = np.frombuffer(zlib.decompress(base64.b64decode(payload)), dtype=np.uint8)
    return np.unpackbits(packed, bitorder="little")[:size].astype(bool)


class EventRecord(BaseModel):
    """
    One event.

    Carries no wall-clock time so that a (config, seed) pair reproduces the
    log byte for byte.
    """
    seq: int = 0
    kind: EventKind
    iter: int = 0
    stage: Optional[str] = None
    t: int = 0
    omega_t: float = 0.0
    active_count: int = 0
    resource: float = 0.0
    loss: Optional[float] = None
    flops_cum: float = 0.0
    phase: Optional[SnapshotPhase] = None
    snapshot: Optional[str] = None
    snapshot_size: Optional[int] = None
    message: Optional[str] = None
    data: Dict[str, Any] = Field(default_factory=dict)
    previous_hash: Optional[str] = None
    entry_hash: str = ""

    def compute_hash(self) -> str:
        """BLAKE3 over every field except ``entry_hash``."""
        payload = self.model_dump(mode="json", exclude={"entry_hash"})
        return blake3.blake3(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def bits(self) -> np.ndarray:
        if self.snapshot is None or self.snapshot_size is None:
            return np.zeros(0, dtype=bool)
        return unpack_bits(self.snapshot, self.snapshot_size)


class EventLog:
    """
    Append-only, hash-chained event log.

    Every record is written as one JSON line and flushed; ``verify_chain``
    re-validates ``previous_hash``/``entry_hash`` end to end. Records are
    also kept in memory for post-hoc metrics. With ``path=None`` the log
    is memory-only.
    """

    def __init__(self, path: Optional[str] = None, sync: bool = False):
        self.path = Path(path) if path else None
        self.sync = sync
        self.records: List[EventRecord] = []
        self._last_hash: Optional[str] = None
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._resume()

    def _resume(self):
        """Continue the chain of an existing file (e.g. after a checkpoint resume)."""
        if not self.path.exists():
            self.path.touch()
            return
        self.records = list(read_events(str(self.path)))
        if self.records:
            self._last_hash = self.records[-1].entry_hash

    def truncate_after(self, seq: int):
        """Drop records with ``seq > seq`` (resume from a checkpoint taken at that record)."""
        with self._lock:
            self.records = [r for r in self.records if r.seq <= seq]
            self._last_hash = self.records[-1].entry_hash if self.records else None
            logger.debug("event log rewound to seq %d", seq)
            if self.path is not None:
                with open(self.path, "w", encoding="utf-8", newline="\n") as f:
                    for record in self.records:
                        f.write(record.model_dump_json() + "\n")

    @property
    def last_seq(self) -> int:
        return self.records[-1].seq if self.records else 0

    def emit(self, kind: EventKind, **fields) -> EventRecord:
        """
        Append one record.

        Args:
            kind: Event kind
            **fields: Remaining EventRecord fields

        Returns:
            The chained record
        """
        with self._lock:
            record = EventRecord(
                seq=self.last_seq + 1, kind=kind, previous_hash=self._last_hash, **fields,
            )
            record.entry_hash = record.compute_hash()
            self._last_hash = record.entry_hash
            if self.path is not None:
                try:
                    with open(self.path, "a", encoding="utf-8", newline="\n") as f:
                        f.write(record.model_dump_json() + "\n")
                        f.flush()
                        if self.sync:
                            os.fsync(f.fileno())
                except OSError as e:
                    raise RuntimeError(f"Failed to write event log: {e}")
            self.records.append(record)
        return record

    def verify_chain(self) -> bool:
        """
        Verify the integrity of the chain.

        Returns:
            True if every record links to its predecessor and hashes correctly
        """
        records = list(read_events(str(self.path))) if self.path is not None else self.records
        return verify_records(records)

    def of_kind(self, kind: EventKind) -> List[EventRecord]:
        return [r for r in self.records if r.kind == kind]

    def snapshots(self, phase: Optional[SnapshotPhase] = None) -> List[EventRecord]:
        return [
            r for r in self.records
            if r.kind == EventKind.SNAPSHOT and (phase is None or r.phase == phase)
        ]


def verify_records(records: List[EventRecord]) -> bool:
    previous_hash = None
    for record in records:
        if record.previous_hash != previous_hash:
            return False
        if record.entry_hash != record.compute_hash():
            return False
        previous_hash = record.entry_hash
    return True


def read_events(path: str) -> Iterator[EventRecord]:
    """Yield the records of a JSONL event log."""
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield EventRecord(**json.loads(line))
