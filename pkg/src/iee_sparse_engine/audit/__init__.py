"""Event log package"""
from .event_log import (
    EventKind,
    EventLog,
    EventRecord,
    SnapshotPhase,
    pack_bits,
    read_events,
    unpack_bits,
    verify_records,
)

__all__ = [
    "EventKind",
    "EventLog",
    "EventRecord",
    "SnapshotPhase",
    "pack_bits",
    "read_events",
    "unpack_bits",
    "verify_records",
]
