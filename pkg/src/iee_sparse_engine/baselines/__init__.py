"""Baseline strategies package"""
from .strategies import (
    BaselineKind,
    BaselineSchedule,
    BaselineStageManager,
    BaselineTrainer,
    rigl_update,
    run_baseline,
    set_update,
)

__all__ = [
    "BaselineKind",
    "BaselineSchedule",
    "BaselineStageManager",
    "BaselineTrainer",
    "rigl_update",
    "run_baseline",
    "set_update",
]
