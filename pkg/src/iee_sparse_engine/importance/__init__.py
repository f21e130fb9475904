"""Importance package"""
from .criteria import (
    ImportanceCriterion,
    ImportanceReport,
    MagnitudeCriterion,
    ReportScope,
    TaylorCriterion,
    build_criterion,
    magnitude_score,
    rigl_grow_score,
    taylor_channel_terms,
)

__all__ = [
    "ImportanceCriterion",
    "ImportanceReport",
    "MagnitudeCriterion",
    "ReportScope",
    "TaylorCriterion",
    "build_criterion",
    "magnitude_score",
    "rigl_grow_score",
    "taylor_channel_terms",
]
