"""Stage management package"""
from .stage_manager import (
    IeeSchedule,
    IterationPlan,
    StageManager,
    StageName,
    StageState,
    UpdateBudget,
    budget_at,
    stage_trace,
)

__all__ = [
    "IeeSchedule",
    "IterationPlan",
    "StageManager",
    "StageName",
    "StageState",
    "UpdateBudget",
    "budget_at",
    "stage_trace",
]
