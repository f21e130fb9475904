"""
Resource function R(.) and the target budget it is held to
"""

from enum import Enum
from typing import TYPE_CHECKING, Optional

from pydantic import BaseModel, Field

from .masks import ParamPartition
from ..errors import LatencyTableError

if TYPE_CHECKING:
    from ..structured.latency_table import LatencyTable


class BudgetKind(str, Enum):
    """Unit of the resource budget"""
    PARAM_COUNT = "param-count"
    LATENCY = "latency"


class ResourceBudget(BaseModel):
    """Target resource Psi: active parameter count, or latency in milliseconds"""
    kind: BudgetKind = BudgetKind.PARAM_COUNT
    target: float = Field(gt=0)

    def measure(self, partition: ParamPartition, latency_table: Optional["LatencyTable"] = None) -> float:
        return resource(partition, self.kind, latency_table)


def resource(
    partition: ParamPartition,
    kind: BudgetKind = BudgetKind.PARAM_COUNT,
    latency_table: Optional["LatencyTable"] = None,
) -> float:
    """
    Current resource used by the active set.

    Args:
        partition: Active / exploration split
        kind: ``param-count`` counts active items; ``latency`` sums the
            per-layer table latency at the active channel counts
        latency_table: Required for the latency kind

    Returns:
        Active item count, or total latency in milliseconds
    """
    if BudgetKind(kind) == BudgetKind.PARAM_COUNT:
        return float(partition.active_count)
    if latency_table is None:
        raise LatencyTableError("latency resource requested without a latency table")
    return latency_table.total_latency(list(partition.per_layer_active().values()))
