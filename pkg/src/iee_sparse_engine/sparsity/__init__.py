"""Sparsity-model package"""
from .distributions import (
    PlanLayout,
    PlanMode,
    PlanScope,
    SparsityPlan,
    erk_layer_densities,
    init_channel_partition,
    init_partition,
    plan_layout,
    round_half_up,
)
from .masks import Granularity, Mask, ParamPartition
from .nm import apply_nm_mask, nm_group_ids
from .resource import BudgetKind, ResourceBudget, resource

__all__ = [
    "PlanLayout",
    "PlanMode",
    "PlanScope",
    "SparsityPlan",
    "erk_layer_densities",
    "init_channel_partition",
    "init_partition",
    "plan_layout",
    "round_half_up",
    "Granularity",
    "Mask",
    "ParamPartition",
    "apply_nm_mask",
    "nm_group_ids",
    "BudgetKind",
    "ResourceBudget",
    "resource",
]
