"""Latency-constrained structured selection package"""
from .channel_selection import (
    channel_counts,
    check_table_matches,
    init_latency_partition,
    structured_grow,
    structured_prune,
)
from .knapsack import ChannelItem, KnapsackSolution, knapsack_select, marginal_reductions
from .latency_table import LatencyTable, load_latency_table, synthetic_latency_table

__all__ = [
    "channel_counts",
    "check_table_matches",
    "init_latency_partition",
    "structured_grow",
    "structured_prune",
    "ChannelItem",
    "KnapsackSolution",
    "knapsack_select",
    "marginal_reductions",
    "LatencyTable",
    "load_latency_table",
    "synthetic_latency_table",
]
