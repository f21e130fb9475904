"""
Latency-constrained channel prune / grow on a channel partition
"""

import itertools
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from .knapsack import KnapsackSolution, knapsack_select, marginal_reductions
from .latency_table import LatencyTable
from ..errors import LatencyTableError
from ..nn.model import Model
from ..sparsity.masks import Granularity, Mask, ParamPartition

logger = logging.getLogger(__name__)

_TOL = 1e-9


def channel_counts(partition: ParamPartition) -> List[int]:
    return [mask.active for mask in partition.masks.values()]


def check_table_matches(table: LatencyTable, model: Model):
    """Raise unless the table has one layer per channel group with enough output channels."""
    groups = model.channel_groups()
    if table.num_layers != len(groups):
        raise LatencyTableError(
            f"latency table has {table.num_layers} layers but the model has {len(groups)} channel-prunable layers"
        )
    for index, group in enumerate(groups):
        if table.max_out(index) < group.channels:
            raise LatencyTableError(
                f"latency table layer {index} covers p_out<={table.max_out(index)}, "
                f"model layer '{group.weight}' has {group.channels} channels"
            )


def _scores(report_values: Optional[Dict[str, np.ndarray]], name: str, size: int) -> np.ndarray:
    if report_values is None or name not in report_values:
        return np.zeros(size)
    return np.asarray(report_values[name], dtype=np.float64).reshape(-1)


def _ranked(
    partition: ParamPartition,
    report_values: Optional[Dict[str, np.ndarray]],
    active: bool,
) -> List[List[Tuple[float, int]]]:
    """Per-layer ``(score, channel)`` of the active or inactive channels, best first."""
    ranked = []
    for name in partition.names():
        bits = partition.masks[name].bits.astype(bool)
        ids = np.flatnonzero(bits if active else ~bits)
        scores = _scores(report_values, name, bits.size)[ids]
        ranked.append(sorted(zip(scores.tolist(), ids.tolist()), key=lambda p: (-p[0], p[1])))
    return ranked


def _fill(
    result: ParamPartition,
    candidates: List[List[Tuple[float, int]]],
    table: LatencyTable,
    goal: float,
    cap: float,
) -> List[Tuple[int, int]]:
    """
    Add candidate heads, best score first, while the realized latency is
    below ``goal`` and each addition keeps it at most ``cap``.

    Latency depends only on the counts, so a layer whose next channel does
    not fit is skipped as a whole. Candidates are taken from the front of
    each layer's list, which keeps the additions a prefix of its ranking.
    """
    names = result.names()
    added: List[Tuple[int, int]] = []
    while True:
        counts = channel_counts(result)
        if table.total_latency(counts) >= goal - _TOL:
            return added
        best = None
        for layer, queue in enumerate(candidates):
            if not queue:
                continue
            trial = list(counts)
            trial[layer] += 1
            if table.total_latency(trial) > cap + _TOL:
                continue
            if best is None or queue[0][0] > candidates[best][0][0]:
                best = layer
        if best is None:
            return added
        _, channel = candidates[best].pop(0)
        result.masks[names[best]].bits[channel] = True
        added.append((best, channel))


def _exchange(
    result: ParamPartition,
    report_values: Optional[Dict[str, np.ndarray]],
    candidates: List[List[Tuple[float, int]]],
    table: LatencyTable,
    cap: float,
) -> Optional[Tuple[int, int, int, int]]:
    """
    Swap the weakest active channel of one layer for the best candidate of
    another layer, picking the swap that raises latency most without
    passing ``cap``.

    Returns:
        ``(from_layer, removed, to_layer, added)``, or None when no swap raises latency
    """
    names = result.names()
    counts = channel_counts(result)
    current = table.total_latency(counts)
    best = None
    for src, dst in itertools.permutations(range(len(names)), 2):
        if counts[src] <= 1 or not candidates[dst]:
            continue
        trial = list(counts)
        trial[src] -= 1
        trial[dst] += 1
        latency = table.total_latency(trial)
        if current + _TOL < latency <= cap + _TOL and (best is None or latency > best[0]):
            best = (latency, src, dst)
    if best is None:
        return None
    _, src, dst = best
    removed = _ranked(result, report_values, True)[src][-1][1]
    _, added = candidates[dst].pop(0)
    result.masks[names[src]].bits[removed] = False
    result.masks[names[dst]].bits[added] = True
    return src, removed, dst, added


def structured_prune(
    partition: ParamPartition,
    report_values: Optional[Dict[str, np.ndarray]],
    table: Optional[LatencyTable],
    psi: float,
    omega: float,
    quantum: float = 0.01,
) -> Tuple[ParamPartition, Optional[KnapsackSolution]]:
    """
    Keep the knapsack-optimal channels of the active set at budget ``psi - omega``.

    Costs are marginal reductions at the current upstream counts; the
    complement of the kept set moves to the exploration space. Pruning a
    layer also shrinks the next layer's input, so the realized latency can
    fall well below the target. The pruned channels are then recosted at
    the realized counts and re-added, best first, while the latency stays
    within the target. With ``omega = 0`` channels are only removed when
    the current latency exceeds ``psi``.

    Args:
        partition: Channel partition
        report_values: Per-layer channel importance over every channel
        table: Latency table
        psi: Target latency in ms
        omega: Update budget in ms
        quantum: Knapsack discretization in ms

    Returns:
        New partition and the knapsack solution (None when nothing ran)
    """
    if table is None:
        raise LatencyTableError("structured prune needs a latency table")
    counts = channel_counts(partition)
    current = table.total_latency(counts)
    target = psi - omega
    if current <= target + _TOL:
        return partition.copy(), None
    names = partition.names()
    upstream = table.upstream_counts(counts)
    ids, scores = [], []
    for name in names:
        bits = partition.masks[name].bits.astype(bool)
        active = np.flatnonzero(bits)
        ids.append(active.tolist())
        scores.append(_scores(report_values, name, bits.size)[active])
    items = marginal_reductions(table, counts, scores, ids)
    fixed = sum(table.latency(l, upstream[l], 0) for l in range(table.num_layers))
    solution = knapsack_select(items, target - fixed, quantum, min_per_layer=1)
    result = partition.copy()
    for layer, name in enumerate(names):
        bits = np.zeros(result.masks[name].size, dtype=bool)
        bits[solution.kept.get(layer, [])] = True
        result.masks[name].bits = bits

    # re-add pruned channels (a continuation of each layer's kept prefix)
    pruned = []
    for layer, name in enumerate(names):
        kept = set(solution.kept.get(layer, []))
        ranked = sorted(
            ((float(s), int(c)) for s, c in zip(scores[layer], ids[layer]) if int(c) not in kept),
            key=lambda p: (-p[0], p[1]),
        )
        pruned.append(ranked)
    for layer, channel in _fill(result, pruned, table, target, target):
        solution.kept.setdefault(layer, []).append(channel)
        solution.prefix_lengths[layer] = solution.prefix_lengths.get(layer, 0) + 1
    return result, solution


def structured_grow(
    partition: ParamPartition,
    report_values: Optional[Dict[str, np.ndarray]],
    table: Optional[LatencyTable],
    psi: float,
    omega: float,
    quantum: float = 0.01,
) -> Tuple[ParamPartition, Optional[KnapsackSolution]]:
    """
    Grow exploration-space channels chosen by the knapsack.

    The budget is the latency headroom ``psi - R(active)``, which is at
    least ``omega`` after a prune at ``psi - omega``. Channels are ranked by
    their exploration-window score and costed on top of each layer's
    current count. Growing one layer raises the next layer's input count,
    so the realized latency is settled afterwards:

    - while it exceeds ``psi + quantum`` the lowest-scored grown channels are dropped;
    - while it is below ``psi`` the best remaining exploration channels are
      added as long as it stays within ``psi + quantum``;
    - if it is still below ``psi - quantum``, one active channel is swapped
      for an exploration channel of another layer when that raises the
      latency, then the fill repeats.

    Args:
        partition: Channel partition after prune
        report_values: Per-layer channel importance over every channel
        table: Latency table
        psi: Target latency in ms
        omega: Update budget in ms; 0 disables growth
        quantum: Knapsack discretization in ms

    Returns:
        New partition and the knapsack solution (None when nothing ran)
    """
    if table is None:
        raise LatencyTableError("structured grow needs a latency table")
    if omega <= 0 or partition.explore_count == 0:
        if partition.explore_count == 0:
            logger.warning("structured grow: exploration space is empty")
        return partition.copy(), None
    counts = channel_counts(partition)
    headroom = psi - table.total_latency(counts)
    if headroom <= 0:
        return partition.copy(), None
    names = partition.names()
    ids, scores = [], []
    for name in names:
        bits = partition.masks[name].bits.astype(bool)
        inactive = np.flatnonzero(~bits)
        ids.append(inactive.tolist())
        scores.append(_scores(report_values, name, bits.size)[inactive])
    items = marginal_reductions(table, counts, scores, ids, offsets=counts)
    solution = knapsack_select(items, headroom, quantum, min_per_layer=0)
    result = partition.copy()
    grown: List[Tuple[float, int, int]] = []
    score_of = {(it.layer, it.channel): it.importance for it in items}
    for layer, name in enumerate(names):
        chosen = solution.kept.get(layer, [])
        result.masks[name].bits[chosen] = True
        grown.extend((score_of[(layer, c)], layer, c) for c in chosen)
    grown.sort(key=lambda g: (g[0], -g[1], -g[2]))
    while grown and table.total_latency(channel_counts(result)) > psi + quantum + _TOL:
        _, layer, channel = grown.pop(0)
        result.masks[names[layer]].bits[channel] = False
        solution.kept[layer].remove(channel)
        solution.prefix_lengths[layer] -= 1

    candidates = _ranked(result, report_values, False)
    cap = psi + quantum
    added = _fill(result, candidates, table, psi, cap)
    while table.total_latency(channel_counts(result)) < psi - quantum - _TOL:
        swap = _exchange(result, report_values, candidates, table, cap)
        if swap is None:
            logger.warning(
                "structured grow: latency %.4f ms stays below %.4f ms",
                table.total_latency(channel_counts(result)), psi - quantum,
            )
            break
        src, removed, dst, channel = swap
        if removed in solution.kept.get(src, []):
            solution.kept[src].remove(removed)
            solution.prefix_lengths[src] -= 1
        added.append((dst, channel))
        added.extend(_fill(result, candidates, table, psi, cap))
    for layer, channel in added:
        if result.masks[names[layer]].bits[channel]:
            solution.kept.setdefault(layer, []).append(channel)
            solution.prefix_lengths[layer] = solution.prefix_lengths.get(layer, 0) + 1
    return result, solution


def init_latency_partition(
    model: Model,
    table: LatencyTable,
    psi: float,
    rng: np.random.Generator,
    quantum: float = 0.01,
) -> ParamPartition:
    """
    Random channel partition whose latency sits at ``psi`` within one quantum.

    Random scores pick the kept prefix from the dense network at budget
    ``psi``; a grow pass then fills any headroom the shrunken upstream
    counts left behind.
    """
    check_table_matches(table, model)
    groups = {g.weight: g for g in model.channel_groups()}
    masks = {
        name: Mask(name=name, granularity=Granularity.CHANNEL, bits=np.ones(g.channels, dtype=bool))
        for name, g in groups.items()
    }
    partition = ParamPartition(masks, groups)
    random_scores = {name: rng.random(g.channels) for name, g in groups.items()}
    partition, _ = structured_prune(partition, random_scores, table, psi, 0.0, quantum)
    partition, _ = structured_grow(partition, random_scores, table, psi, psi, quantum)
    return partition
