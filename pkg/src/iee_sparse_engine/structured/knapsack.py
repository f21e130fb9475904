"""
Marginal latency reductions and the prefix-constrained knapsack over channels
"""

import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .latency_table import LatencyTable
from ..errors import InfeasibleBudgetError

_TOL = 1e-9


class ChannelItem(BaseModel):
    """One candidate channel: its importance and the latency it adds at its rank"""
    layer: int
    channel: int
    importance: float = 0.0
    cost: float
    rank: int


class KnapsackSolution(BaseModel):
    """Kept channels per layer (a rank prefix in every layer) with totals"""
    kept: Dict[int, List[int]] = Field(default_factory=dict)
    prefix_lengths: Dict[int, int] = Field(default_factory=dict)
    total_importance: float = 0.0
    total_cost: float = 0.0


def marginal_reductions(
    table: LatencyTable,
    counts: Sequence[int],
    importances: Optional[Sequence[np.ndarray]] = None,
    channel_ids: Optional[Sequence[Sequence[int]]] = None,
    offsets: Optional[Sequence[int]] = None,
) -> List[ChannelItem]:
    """
    Rank each layer's candidate channels and attach ``R^l_j``.

    With ``p`` the upstream active count of the layer, the item at rank
    ``j`` costs ``T^l(p, base + j) - T^l(p, base + j - 1)`` where ``base`` is
    the layer's offset (0 when selecting from scratch, the kept count when
    growing on top of an active set).

    Args:
        table: Latency table
        counts: Current active channel count per layer (gives ``p^{l-1}``)
        importances: Per-layer scores of the candidates; rank order is by
            descending score, ties by channel id. Defaults to zero scores.
        channel_ids: Per-layer candidate channel ids; defaults to ``range(counts[l])``
        offsets: Per-layer rank offset ``base``; defaults to 0

    Returns:
        Items in (layer, rank) order
    """
    upstream = table.upstream_counts(counts)
    items: List[ChannelItem] = []
    for layer in range(table.num_layers):
        ids = list(channel_ids[layer]) if channel_ids is not None else list(range(int(counts[layer])))
        scores = (
            np.asarray(importances[layer], dtype=np.float64)
            if importances is not None else np.zeros(len(ids))
        )
        order = sorted(range(len(ids)), key=lambda k: (-scores[k], ids[k]))
        base = int(offsets[layer]) if offsets is not None else 0
        p_in = upstream[layer]
        for rank, k in enumerate(order, start=1):
            cost = table.latency(layer, p_in, base + rank) - table.latency(layer, p_in, base + rank - 1)
            items.append(ChannelItem(
                layer=layer, channel=int(ids[k]), importance=float(scores[k]), cost=cost, rank=rank,
            ))
    return items


def _units(cost: float, quantum: float) -> int:
    if cost <= 0.0:
        return 0
    return int(math.ceil(cost / quantum - _TOL))


def knapsack_select(
    items: Sequence[ChannelItem],
    budget: float,
    quantum: float = 0.01,
    min_per_layer: int = 1,
) -> KnapsackSolution:
    """
    Maximize kept importance under a latency budget with rank-prefix precedence.

    Every layer keeps a prefix of its rank order, at least ``min_per_layer``
    long (or all of its items if it has fewer). Item costs are discretized
    up to multiples of ``quantum``; items with non-positive cost take no
    capacity and therefore always extend a chosen prefix when they add
    importance. Among optimal objectives, more kept channels win.

    Args:
        items: Candidates from ``marginal_reductions``
        budget: Latency available to the items, in ms
        quantum: Discretization step in ms
        min_per_layer: Mandatory prefix length per layer

    Returns:
        KnapsackSolution with the kept channels

    Raises:
        InfeasibleBudgetError: the mandatory prefixes alone exceed the budget
    """
    if quantum <= 0:
        raise InfeasibleBudgetError(f"knapsack quantum must be > 0, got {quantum}")
    by_layer: Dict[int, List[ChannelItem]] = {}
    for item in items:
        by_layer.setdefault(item.layer, []).append(item)
    layers = sorted(by_layer)
    for layer in layers:
        by_layer[layer].sort(key=lambda it: it.rank)

    capacity = int(math.floor(max(budget, 0.0) / quantum + _TOL)) if budget >= -_TOL else -1
    floor_units = 0
    options = []
    for layer in layers:
        chain = by_layer[layer]
        units = np.cumsum([0] + [_units(it.cost, quantum) for it in chain])
        values = np.cumsum([0.0] + [it.importance for it in chain])
        k_min = min(min_per_layer, len(chain))
        options.append((layer, k_min, units, values))
        floor_units += int(units[k_min])
    if capacity < 0 or floor_units > capacity:
        raise InfeasibleBudgetError(
            f"latency budget {budget:.4f} ms is below the one-channel-per-layer floor "
            f"({floor_units * quantum:.4f} ms at quantum {quantum})"
        )

    neg = -np.inf
    best_v = np.zeros(capacity + 1)
    best_n = np.zeros(capacity + 1, dtype=np.int64)
    choices = []
    for layer, k_min, units, values in options:
        new_v = np.full(capacity + 1, neg)
        new_n = np.zeros(capacity + 1, dtype=np.int64)
        pick = np.full(capacity + 1, -1, dtype=np.int64)
        for k in range(k_min, len(units)):
            c = int(units[k])
            if c > capacity:
                break
            cand_v = np.full(capacity + 1, neg)
            cand_n = np.zeros(capacity + 1, dtype=np.int64)
            cand_v[c:] = best_v[:capacity + 1 - c] + values[k]
            cand_n[c:] = best_n[:capacity + 1 - c] + k
            with np.errstate(invalid="ignore"):
                better = (cand_v > new_v + 1e-12) | (
                    (np.abs(cand_v - new_v) <= 1e-12) & (cand_n > new_n) & np.isfinite(cand_v)
                )
            new_v = np.where(better, cand_v, new_v)
            new_n = np.where(better, cand_n, new_n)
            pick = np.where(better, k, pick)
        best_v, best_n = new_v, new_n
        choices.append(pick)

    solution = KnapsackSolution()
    remaining = capacity
    for (layer, _, units, values), pick in zip(reversed(options), reversed(choices)):
        k = int(pick[remaining])
        chain = by_layer[layer]
        solution.prefix_lengths[layer] = k
        solution.kept[layer] = [it.channel for it in chain[:k]]
        solution.total_importance += float(values[k])
        solution.total_cost += float(sum(it.cost for it in chain[:k]))
        remaining -= int(units[k])
    solution.kept = dict(sorted(solution.kept.items()))
    solution.prefix_lengths = dict(sorted(solution.prefix_lengths.items()))
    return solution
