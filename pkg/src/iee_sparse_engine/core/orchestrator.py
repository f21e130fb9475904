"""
Training loop that drives estimate, prune, improve, explore, and grow over a sparse model
"""

import logging
import math
from enum import Enum
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from ..audit.event_log import EventKind, EventLog, SnapshotPhase, pack_bits
from ..errors import InfeasibleBudgetError, RunDivergedError, ShapeError, StateError
from ..harness.datasets import Dataset
from ..importance.criteria import ImportanceCriterion, ImportanceReport
from ..ledger.flops_ledger import CostStage, FlopsLedger, LedgerSnapshot, forward_flops
from ..nn.model import LossKind, Model
from ..nn.optim import Optimizer, sgd_step
from ..phases.stage_manager import (
    IeeSchedule,
    IterationPlan,
    StageManager,
    StageName,
    StageState,
    UpdateBudget,
    budget_at,
)
from ..reproducibility.state_manager import StateManager, load_checkpoint, save_checkpoint, seed_stream
from ..sparsity.distributions import PlanMode, SparsityPlan
from ..sparsity.masks import Granularity, ParamPartition
from ..sparsity.resource import BudgetKind, ResourceBudget, resource
from ..structured.channel_selection import structured_grow, structured_prune
from ..structured.latency_table import LatencyTable

logger = logging.getLogger(__name__)

ReportLike = Union[ImportanceReport, Dict[str, np.ndarray]]

_STAGE_COST = {
    StageName.ESTIMATE: CostStage.ESTIMATE,
    StageName.IMPROVE: CostStage.IMPROVE,
    StageName.EXPLORE: CostStage.EXPLORE,
    StageName.POST_PERIOD: CostStage.POST_PERIOD,
}


class SelectionRule(str, Enum):
    """How the update budget is spread over layers"""
    PER_LAYER = "per-layer"
    GLOBAL = "global"
    N_OF_M = "n-of-m"


def selection_for(plan: SparsityPlan) -> SelectionRule:
    """Uniform and ERK plans keep per-layer counts; non-uniform ranks globally."""
    if plan.mode == PlanMode.N_OF_M:
        return SelectionRule.N_OF_M
    if plan.mode == PlanMode.NON_UNIFORM:
        return SelectionRule.GLOBAL
    return SelectionRule.PER_LAYER


class EngineSettings(BaseModel):
    """Run options of the training loop that are not part of the cycle schedule"""
    freeze_active: bool = True
    grow_criterion: Literal["criterion", "random"] = "criterion"
    grow_init: Literal["mru", "zero"] = "mru"
    omega_fraction: float = Field(default=0.3, ge=0.0, le=1.0)
    nan_patience: int = Field(default=50, gt=0)
    selection: SelectionRule = SelectionRule.PER_LAYER
    budget_kind: BudgetKind = BudgetKind.PARAM_COUNT
    psi: Optional[float] = None
    quantum: float = Field(default=0.01, gt=0.0)
    log_iterations: bool = True
    log_snapshots: bool = True
    checkpoint_every: int = Field(default=0, ge=0)


class RunResult(BaseModel):
    """Outcome of one training run"""
    strategy: str = "iee"
    iterations: int = 0
    cycles: int = 0
    diverged: bool = False
    final_loss: Optional[float] = None
    test_loss: Optional[float] = None
    test_accuracy: Optional[float] = None
    active_count: int = 0
    resource: float = 0.0
    psi: float = 0.0
    flops: LedgerSnapshot = Field(default_factory=LedgerSnapshot)
    mean_zeta_p: float = 0.0
    zeta_d: float = 0.0

    def metrics(self) -> Dict[str, Any]:
        """Flat metrics for manifests and ablation tables."""
        return {
            "iterations": self.iterations,
            "cycles": self.cycles,
            "diverged": self.diverged,
            "final_loss": self.final_loss,
            "test_loss": self.test_loss,
            "test_accuracy": self.test_accuracy,
            "active_count": self.active_count,
            "resource": self.resource,
            "psi": self.psi,
            "flops_total": self.flops.cumulative,
            "flops_per_sample": self.flops.per_sample,
            "mean_zeta_p": self.mean_zeta_p,
            "zeta_d": self.zeta_d,
        }

    def raise_if_diverged(self):
        if self.diverged:
            raise RunDivergedError(
                f"{self.strategy} run stopped at iteration {self.iterations}: loss stayed non-finite"
            )


def finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def _report_values(report: ReportLike) -> Dict[str, np.ndarray]:
    return report.values if isinstance(report, ImportanceReport) else report


def _layer_scores(partition: ParamPartition, values: Dict[str, np.ndarray], name: str) -> np.ndarray:
    if name not in values:
        raise StateError(f"importance report does not cover '{name}'")
    scores = np.asarray(values[name], dtype=np.float64).reshape(-1)
    if scores.size != partition.masks[name].size:
        raise ShapeError(f"report for '{name}' has {scores.size} scores for {partition.masks[name].size} items")
    return scores


def _candidates(
    partition: ParamPartition,
    values: Dict[str, np.ndarray],
    active: bool,
    names: Optional[Sequence[str]] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(score, layer index, flat index) of every active (or inactive) item."""
    all_names = partition.names()
    scores, layers, flats = [], [], []
    for layer, name in enumerate(all_names):
        if names is not None and name not in names:
            continue
        bits = partition.masks[name].bits.reshape(-1).astype(bool)
        idx = np.flatnonzero(bits if active else ~bits)
        scores.append(_layer_scores(partition, values, name)[idx])
        layers.append(np.full(idx.size, layer, dtype=np.int64))
        flats.append(idx)
    if not flats:
        return np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(scores), np.concatenate(layers), np.concatenate(flats)


def _ranked(scores: np.ndarray, layers: np.ndarray, flats: np.ndarray, descending: bool) -> np.ndarray:
    """Order ties by layer index, then flat index."""
    return np.lexsort((flats, layers, -scores if descending else scores))


def split_budget(total: int, counts: Sequence[int]) -> List[int]:
    """
    Split ``total`` over layers in proportion to ``counts``.

    Floors go to every layer and the remainder to the largest one; a
    layer never receives more than its count.
    """
    counts = [int(c) for c in counts]
    available = sum(counts)
    if total <= 0 or available == 0:
        return [0] * len(counts)
    total = min(int(total), available)
    quotas = [total * c // available for c in counts]
    largest = int(np.argmax(counts))
    quotas[largest] += total - sum(quotas)
    overflow = quotas[largest] - counts[largest]
    if overflow > 0:
        quotas[largest] = counts[largest]
        for index in sorted(range(len(counts)), key=lambda j: (-counts[j], j)):
            take = min(counts[index] - quotas[index], overflow)
            quotas[index] += take
            overflow -= take
    return quotas


def _moved_from(partition: ParamPartition, selected: Dict[str, List[np.ndarray]]) -> Dict[str, np.ndarray]:
    return {
        name: np.sort(np.concatenate(selected[name])) if selected.get(name) else np.zeros(0, dtype=np.int64)
        for name in partition.names()
    }


def prune_step(
    partition: ParamPartition,
    report: ReportLike,
    omega: int,
    selection: SelectionRule = SelectionRule.PER_LAYER,
) -> Tuple[ParamPartition, Dict[str, np.ndarray]]:
    """
    Move the ``omega`` least important active items to the exploration space.

    Stored values are left untouched; only mask bits change.

    Args:
        partition: Current partition
        report: Importance over (at least) the active set
        omega: Items to move
        selection: ``per-layer`` splits omega in proportion to each layer's
            active count; ``global`` and ``n-of-m`` rank every active item together

    Returns:
        New partition and the flat indices pruned from each tensor
    """
    values = _report_values(report)
    result = partition.copy()
    k = int(omega)
    selected: Dict[str, List[np.ndarray]] = {}
    if k <= 0:
        return result, _moved_from(partition, selected)
    names = partition.names()
    if SelectionRule(selection) == SelectionRule.PER_LAYER:
        quotas = split_budget(k, [partition.masks[n].active for n in names])
        for name, quota in zip(names, quotas):
            if quota <= 0:
                continue
            scores, layers, flats = _candidates(partition, values, active=True, names=[name])
            selected[name] = [flats[_ranked(scores, layers, flats, descending=False)[:quota]]]
    else:
        scores, layers, flats = _candidates(partition, values, active=True)
        chosen = _ranked(scores, layers, flats, descending=False)[:k]
        for layer, name in enumerate(names):
            selected[name] = [flats[chosen][layers[chosen] == layer]]
    moved = _moved_from(partition, selected)
    for name, idx in moved.items():
        result.masks[name].bits.reshape(-1)[idx] = False
    return result, moved


def _group_deficits(partition: ParamPartition, name: str) -> Tuple[np.ndarray, np.ndarray]:
    mask = partition.masks[name]
    if mask.group_ids is None or mask.group_capacity is None:
        raise StateError(f"mask '{name}' carries no N:M groups")
    ids = mask.group_ids.reshape(-1)
    active = np.bincount(ids[mask.bits.reshape(-1).astype(bool)], minlength=mask.group_capacity.size)
    return ids, np.maximum(mask.group_capacity - active, 0)


def grow_step(
    partition: ParamPartition,
    report: ReportLike,
    omega: int,
    selection: SelectionRule = SelectionRule.PER_LAYER,
    quotas: Optional[Dict[str, int]] = None,
) -> Tuple[ParamPartition, Dict[str, np.ndarray]]:
    """
    Move the ``omega`` most important exploration-space items into the active set.

    Grown items keep whatever value they hold (most recently used or
    explored).

    Args:
        partition: Partition after prune
        report: Importance over (at least) the exploration space
        omega: Items to move
        selection: ``per-layer`` grows ``quotas[name]`` items per tensor
            (default: omega split by inactive counts); ``global`` ranks
            everything together; ``n-of-m`` only refills groups below capacity
        quotas: Per-tensor grow counts for ``per-layer``

    Returns:
        New partition and the flat indices grown in each tensor
    """
    values = _report_values(report)
    result = partition.copy()
    k = int(omega)
    selected: Dict[str, List[np.ndarray]] = {}
    names = partition.names()
    if k <= 0 or partition.explore_count == 0:
        return result, _moved_from(partition, selected)
    rule = SelectionRule(selection)
    if rule == SelectionRule.PER_LAYER:
        if quotas is None:
            split = split_budget(k, [partition.masks[n].size - partition.masks[n].active for n in names])
            quotas = dict(zip(names, split))
        for name in names:
            quota = int(quotas.get(name, 0))
            if quota <= 0:
                continue
            scores, layers, flats = _candidates(partition, values, active=False, names=[name])
            selected[name] = [flats[_ranked(scores, layers, flats, descending=True)[:quota]]]
    else:
        scores, layers, flats = _candidates(partition, values, active=False)
        order = _ranked(scores, layers, flats, descending=True)
        if rule == SelectionRule.N_OF_M:
            keys = np.zeros(flats.size, dtype=np.int64)
            deficit_of = np.zeros(flats.size, dtype=np.int64)
            offset = 0
            for layer, name in enumerate(names):
                ids, deficits = _group_deficits(partition, name)
                here = layers == layer
                keys[here] = offset + ids[flats[here]]
                deficit_of[here] = deficits[ids[flats[here]]]
                offset += deficits.size
            ordered_keys = keys[order]
            perm = np.argsort(ordered_keys, kind="stable")
            sorted_keys = ordered_keys[perm]
            starts = np.r_[0, np.flatnonzero(np.diff(sorted_keys)) + 1] if sorted_keys.size else np.zeros(0, dtype=np.int64)
            lengths = np.diff(np.r_[starts, sorted_keys.size])
            rank_sorted = np.arange(sorted_keys.size) - np.repeat(starts, lengths)
            rank = np.empty_like(rank_sorted)
            rank[perm] = rank_sorted
            order = order[rank < deficit_of[order]]
        chosen = order[:k]
        for layer, name in enumerate(names):
            selected[name] = [flats[chosen][layers[chosen] == layer]]
    moved = _moved_from(partition, selected)
    for name, idx in moved.items():
        result.masks[name].bits.reshape(-1)[idx] = True
    return result, moved


def train_batch(
    model: Model,
    partition: ParamPartition,
    optimizer: Optimizer,
    x: np.ndarray,
    y: np.ndarray,
    explore: bool = False,
    freeze_active: bool = True,
    forward_masks: Optional[Dict[str, np.ndarray]] = None,
    update_masks: Optional[Dict[str, np.ndarray]] = None,
) -> float:
    """
    One forward/backward/update step.

    The active set trains under its masks; with ``explore`` every item takes
    part in the forward pass and only the exploration space (plus the active
    set when ``freeze_active`` is off) is updated.

    Returns:
        Mini-batch loss
    """
    if forward_masks is None and not explore:
        forward_masks = partition.forward_masks(model)
    if update_masks is None:
        update_masks = (
            partition.explore_update_masks(model, include_active=not freeze_active)
            if explore else partition.active_update_masks(model)
        )
    model.zero_grad()
    out = model.forward(x, training=True, masks=None if explore else forward_masks)
    loss = model.compute_loss(out, y)
    model.backward(loss)
    sgd_step(model, optimizer, update_masks)
    return loss.item()


def improve_stage(
    model: Model,
    partition: ParamPartition,
    optimizer: Optimizer,
    batches: Iterable[Tuple[np.ndarray, np.ndarray]],
    ledger: Optional[FlopsLedger] = None,
) -> List[float]:
    """
    Train the active set on each batch; exploration-space values stay as they are.

    Args:
        model: Model
        partition: Partition after prune
        optimizer: Optimizer
        batches: J mini-batches
        ledger: Charged ``3 * zeta_P`` per sample when given

    Returns:
        Per-step losses
    """
    losses = []
    for x, y in batches:
        losses.append(train_batch(model, partition, optimizer, x, y))
        if ledger is not None:
            ledger.charge(CostStage.IMPROVE, len(x))
    return losses


def explore_stage(
    model: Model,
    partition: ParamPartition,
    optimizer: Optimizer,
    batches: Iterable[Tuple[np.ndarray, np.ndarray]],
    criterion: ImportanceCriterion,
    freeze_active: bool = True,
    ledger: Optional[FlopsLedger] = None,
) -> ImportanceReport:
    """
    Reactivate the exploration space at its stored values and train it alone.

    Every item joins the forward pass; only exploration-space items are
    updated, so active values come out bit-identical. BatchNorm running
    statistics keep updating.

    Args:
        model: Model
        partition: Partition after improve
        optimizer: Optimizer
        batches: Q mini-batches
        criterion: The run's importance criterion
        freeze_active: Keep the active set fixed (off trains both sets)
        ledger: Charged ``2 * zeta_P + zeta_D`` per sample when given

    Returns:
        The criterion's report over the exploration window
    """
    criterion.begin_window()
    update_masks = partition.explore_update_masks(model, include_active=not freeze_active)
    for x, y in batches:
        train_batch(model, partition, optimizer, x, y, explore=True, update_masks=update_masks)
        criterion.observe(model, partition)
        if ledger is not None:
            ledger.charge(CostStage.EXPLORE, len(x))
    return criterion.report(model, partition)


def evaluate(model: Model, partition: Optional[ParamPartition], dataset: Dataset, batch_size: int = 1024) -> Dict[str, Optional[float]]:
    """
    Test loss and accuracy of the active network (BatchNorm in inference mode).

    Accuracy is None for regression losses.
    """
    masks = partition.forward_masks(model) if partition is not None else None
    total_loss, correct, count = 0.0, 0, 0
    for x, y in dataset.test_batches(batch_size):
        out = model.forward(x, training=False, masks=masks)
        loss = model.compute_loss(out, y).item()
        total_loss += loss * len(x)
        if model.loss_kind == LossKind.CROSS_ENTROPY:
            correct += int((out.data.argmax(axis=1) == np.asarray(y).reshape(-1)).sum())
        count += len(x)
    if count == 0:
        return {"test_loss": None, "test_accuracy": None}
    accuracy = correct / count if model.loss_kind == LossKind.CROSS_ENTROPY else None
    return {"test_loss": finite_or_none(total_loss / count), "test_accuracy": accuracy}


class SparseTrainer:
    """
    Owns one run: model, partition, optimizer, data stream, ledger, and event log.

    Each iteration first applies the mask events its plan calls for (prune,
    start of exploration, grow) and then takes one training step in the
    plan's stage. One criterion instance scores both prune and grow.
    """

    strategy = "iee"

    def __init__(
        self,
        model: Model,
        partition: ParamPartition,
        optimizer: Optimizer,
        dataset: Dataset,
        schedule: IeeSchedule,
        criterion: ImportanceCriterion,
        settings: Optional[EngineSettings] = None,
        event_log: Optional[EventLog] = None,
        latency_table: Optional[LatencyTable] = None,
        state_manager: Optional[StateManager] = None,
        seed: int = 0,
    ):
        self.model = model
        self.partition = partition
        self.optimizer = optimizer
        self.dataset = dataset
        self.schedule = schedule
        self.criterion = criterion
        self.settings = settings or EngineSettings()
        self.event_log = event_log or EventLog()
        self.latency_table = latency_table
        self.state_manager = state_manager
        self.seed = seed

        measured = resource(partition, self.settings.budget_kind, latency_table)
        psi = float(self.settings.psi) if self.settings.psi is not None else measured
        if psi <= 0:
            raise InfeasibleBudgetError(f"resource target must be positive, got {psi}")
        self.target = ResourceBudget(kind=self.settings.budget_kind, target=psi)
        self.psi = self.target.target
        self.resource_now = measured
        integral = self.settings.budget_kind == BudgetKind.PARAM_COUNT
        self.budget = UpdateBudget.from_psi(self.psi, schedule.T, self.settings.omega_fraction, integral=integral)
        self.stages = StageManager(schedule)
        self.ledger = FlopsLedger(
            zeta_d=forward_flops(model),
            zeta_p=forward_flops(model, partition.forward_masks(model)),
        )
        self.grow_rng = seed_stream(seed, "set-grow")

        self.omega = 0.0
        self.quotas: Dict[str, int] = {}
        self.nan_streak = 0
        self.last_loss: Optional[float] = None
        self.diverged = False
        self.cycles = 0
        self._stage: Optional[StageName] = None
        self._forward: Optional[Dict[str, np.ndarray]] = None
        self._update: Optional[Dict[str, np.ndarray]] = None

    # mask bookkeeping

    def _measure(self) -> float:
        return self.target.measure(self.partition, self.latency_table)

    def _set_partition(self, partition: ParamPartition):
        """Install a new partition; velocities of inactive entries are zeroed."""
        self.partition = partition
        self._forward = partition.forward_masks(self.model)
        self._update = None
        for name, keep in self._forward.items():
            self.optimizer.reset_velocity(name, keep)
        self.ledger.set_sparse(forward_flops(self.model, self._forward))
        self.resource_now = self._measure()

    def _forward_masks(self) -> Dict[str, np.ndarray]:
        if self._forward is None:
            self._forward = self.partition.forward_masks(self.model)
        return self._forward

    def _update_masks(self, explore: bool) -> Dict[str, np.ndarray]:
        if explore:
            return self.partition.explore_update_masks(self.model, include_active=not self.settings.freeze_active)
        if self._update is None:
            self._update = self.partition.active_update_masks(self.model)
        return self._update

    def _zero_grown(self, moved: Dict[str, np.ndarray]):
        params = self.model.named_parameters()
        for name, idx in moved.items():
            if idx.size == 0:
                continue
            if self.partition.granularity == Granularity.CHANNEL:
                group = self.partition.groups[name]
                targets = [t for t in (group.weight, group.bias) if t is not None]
                for target in targets:
                    params[target].data[idx] = 0.0
                    if target in self.optimizer.velocity:
                        self.optimizer.velocity[target][idx] = 0.0
            else:
                params[name].data.reshape(-1)[idx] = 0.0
                if name in self.optimizer.velocity:
                    self.optimizer.velocity[name].reshape(-1)[idx] = 0.0

    # event log

    def _emit(self, kind: EventKind, **fields):
        defaults = dict(
            iter=self.stages.state.i,
            t=self.stages.state.t,
            omega_t=float(self.omega),
            active_count=self.partition.active_count,
            resource=float(self.resource_now),
            flops_cum=self.ledger.cumulative,
        )
        defaults.update(fields)
        return self.event_log.emit(kind, **defaults)

    def _warn(self, message: str, **data):
        logger.warning(message)
        self._emit(EventKind.WARNING, message=message, data=data)

    def _snapshot(self, phase: SnapshotPhase, t: int):
        if not self.settings.log_snapshots:
            return
        bits = self.partition.flat_bits()
        self._emit(EventKind.SNAPSHOT, t=t, phase=phase, snapshot=pack_bits(bits), snapshot_size=int(bits.size))

    def _log_importance(self, report: ImportanceReport, window: str, t: int):
        flat = report.flat()
        finite = flat[np.isfinite(flat)]
        self._emit(
            EventKind.IMPORTANCE,
            t=t,
            data={
                "window": window,
                "criterion": report.criterion,
                "steps": report.accumulation_steps,
                "items": int(flat.size),
                "mean": finite_or_none(finite.mean()) if finite.size else None,
                "max": finite_or_none(finite.max()) if finite.size else None,
            },
        )

    # mask events

    def _prune(self, t: int):
        report = self.criterion.report(self.model, self.partition)
        self._log_importance(report, "estimate", t)
        before = self.partition
        if self.settings.budget_kind == BudgetKind.LATENCY:
            self.omega = budget_at(t, self.budget)
            try:
                after, _ = structured_prune(
                    before, report.values, self.latency_table, self.psi, self.omega, self.settings.quantum,
                )
            except InfeasibleBudgetError as e:
                self._warn(f"prune skipped at step {t}: {e}", t=t)
                after = before.copy()
        else:
            omega = int(budget_at(t, self.budget))
            if omega > before.active_count:
                self._warn(
                    f"update budget {omega} exceeds {before.active_count} active items; clamped",
                    t=t, requested=omega,
                )
                omega = before.active_count
            self.omega = float(omega)
            after, _ = prune_step(before, report, omega, self.settings.selection)
        moved = {
            name: np.flatnonzero(before.masks[name].bits.reshape(-1).astype(bool) & ~after.masks[name].bits.reshape(-1).astype(bool))
            for name in before.names()
        }
        self.quotas = {name: int(idx.size) for name, idx in moved.items()}
        self._set_partition(after)
        self._emit(EventKind.PRUNE, t=t, data={"moved": sum(self.quotas.values()), "per_layer": self.quotas})
        self._snapshot(SnapshotPhase.AFTER_PRUNE, t)

    def _grow(self, t: int):
        before = self.partition
        if self.settings.grow_criterion == "random":
            report = ImportanceReport(
                scope=self.criterion.scope,
                criterion="random",
                values={name: self.grow_rng.random(mask.bits.shape) for name, mask in before.masks.items()},
            )
        else:
            report = self.criterion.report(self.model, before)
            self._log_importance(report, "explore", t)
        if before.explore_count == 0:
            self._warn(f"grow skipped at step {t}: exploration space is empty", t=t)
            after = before.copy()
        elif self.settings.budget_kind == BudgetKind.LATENCY:
            try:
                after, _ = structured_grow(
                    before, report.values, self.latency_table, self.psi, self.omega, self.settings.quantum,
                )
            except InfeasibleBudgetError as e:
                self._warn(f"grow skipped at step {t}: {e}", t=t)
                after = before.copy()
        else:
            count = sum(self.quotas.values())
            if count > before.explore_count:
                self._warn(
                    f"grow budget {count} exceeds {before.explore_count} inactive items; clamped",
                    t=t, requested=count,
                )
                count = before.explore_count
            after, _ = grow_step(before, report, count, self.settings.selection, quotas=self.quotas)
        moved = {
            name: np.flatnonzero(~before.masks[name].bits.reshape(-1).astype(bool) & after.masks[name].bits.reshape(-1).astype(bool))
            for name in before.names()
        }
        if self.settings.grow_init == "zero":
            self._zero_grown(moved)
        self._set_partition(after)
        self.quotas = {}
        self.cycles += 1
        self._emit(
            EventKind.GROW, t=t,
            data={"moved": int(sum(idx.size for idx in moved.values())), "per_layer": {k: int(v.size) for k, v in moved.items()}},
        )
        self._snapshot(SnapshotPhase.AFTER_GROW, t)

    def apply_mask_events(self, plan: IterationPlan, x: np.ndarray, y: np.ndarray):
        if plan.prune:
            self._prune(plan.t if not plan.grow else plan.t - 1)
        if plan.begin_explore:
            self.criterion.begin_window()
        if plan.grow:
            self._grow(plan.t - 1)
            self.criterion.begin_window()

    def next_plan(self) -> IterationPlan:
        return self.stages.advance()

    # training

    def train_step(self, plan: IterationPlan, x: np.ndarray, y: np.ndarray) -> float:
        explore = plan.stage == StageName.EXPLORE
        loss = train_batch(
            self.model, self.partition, self.optimizer, x, y,
            explore=explore,
            freeze_active=self.settings.freeze_active,
            forward_masks=None if explore else self._forward_masks(),
            update_masks=self._update_masks(explore),
        )
        if plan.stage in (StageName.ESTIMATE, StageName.EXPLORE):
            self.criterion.observe(self.model, self.partition)
        self.ledger.charge(_STAGE_COST[plan.stage], len(x))
        return loss

    def step(self, plan: IterationPlan, x: np.ndarray, y: np.ndarray):
        """Mask events, then one training step, then logging and the divergence check."""
        self.apply_mask_events(plan, x, y)
        if plan.stage != self._stage:
            self._emit(EventKind.STAGE, stage=plan.stage.value, data={"previous": self._stage.value if self._stage else None})
            self._stage = plan.stage
        loss = self.train_step(plan, x, y)
        self.last_loss = finite_or_none(loss)
        self.nan_streak = 0 if self.last_loss is not None else self.nan_streak + 1
        if self.settings.log_iterations:
            self._emit(EventKind.ITERATION, stage=plan.stage.value, loss=self.last_loss)
        if self.nan_streak >= self.settings.nan_patience:
            self.diverged = True
            self._emit(
                EventKind.DIVERGED, stage=plan.stage.value,
                message=f"loss non-finite for {self.nan_streak} consecutive iterations",
            )

    def start(self):
        self.criterion.begin_window()
        self._emit(
            EventKind.RUN_START,
            data={
                "strategy": self.strategy,
                "psi": self.psi,
                "T": self.schedule.T,
                "delta_t": self.schedule.delta_t,
                "H": self.schedule.H,
                "J": self.schedule.J,
                "Q": self.schedule.Q,
                "total_train_iters": self.schedule.total_train_iters,
                "criterion": self.criterion.name,
                "selection": self.settings.selection.value,
                "budget_kind": self.settings.budget_kind.value,
                "zeta_d": self.ledger.zeta_d,
                "zeta_p": self.ledger.zeta_p,
            },
        )
        self._snapshot(SnapshotPhase.INIT, 0)

    def run(self) -> RunResult:
        """
        Train until ``total_train_iters`` (or divergence).

        Resumes from the current iteration when a checkpoint was restored.

        Returns:
            RunResult with test metrics and ledger totals
        """
        total = self.schedule.total_train_iters
        if self.stages.state.i == 0:
            self.start()
        stream = self.dataset.stream(self.stages.state.i)
        every = self.settings.checkpoint_every
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            while self.stages.state.i < total and not self.diverged:
                _, _, x, y = next(stream)
                plan = self.next_plan()
                self.step(plan, x, y)
                if every and self.state_manager is not None and plan.iteration % every == 0 and not self.diverged:
                    self.save(str(self.state_manager.checkpoint_path(plan.iteration)))
            return self.finish()

    def finish(self) -> RunResult:
        metrics = evaluate(self.model, self.partition, self.dataset)
        result = RunResult(
            strategy=self.strategy,
            iterations=self.stages.state.i,
            cycles=self.cycles,
            diverged=self.diverged,
            final_loss=self.last_loss,
            test_loss=None if self.diverged else metrics["test_loss"],
            test_accuracy=None if self.diverged else metrics["test_accuracy"],
            active_count=self.partition.active_count,
            resource=float(self.resource_now),
            psi=self.psi,
            flops=self.ledger.snapshot(),
            mean_zeta_p=self.ledger.mean_zeta_p(),
            zeta_d=self.ledger.zeta_d,
        )
        self._emit(EventKind.RUN_END, data=result.metrics())
        return result

    # checkpoints

    def save(self, path: str):
        """Write a checkpoint that resumes to the same trajectory as an uninterrupted run."""
        self._emit(EventKind.CHECKPOINT, message=path)
        arrays = {f"param/{k}": v for k, v in self.model.state_dict().items()}
        arrays.update({f"velocity/{k}": v for k, v in self.optimizer.state_dict().items()})
        arrays.update({f"criterion/{k}": v for k, v in self.criterion.state().items()})
        masks = {f"mask/{k}": m.bits for k, m in self.partition.masks.items()}
        header = {
            "strategy": self.strategy,
            "stage_state": self.stages.state.model_dump(mode="json"),
            "stage": self._stage.value if self._stage else None,
            "omega": self.omega,
            "quotas": self.quotas,
            "nan_streak": self.nan_streak,
            "last_loss": self.last_loss,
            "cycles": self.cycles,
            "optimizer_steps": self.optimizer.step_count,
            "criterion_steps": self.criterion.steps,
            "grow_rng": self.grow_rng.bit_generator.state,
            "ledger": self.ledger.snapshot().model_dump(mode="json"),
            "zeta_p": self.ledger.zeta_p,
            "zeta_p_history": self.ledger.zeta_p_history,
            "event_seq": self.event_log.last_seq,
        }
        save_checkpoint(path, arrays, masks, header)

    def restore(self, path: str):
        """Load a checkpoint written by ``save`` and rewind the event log to it."""
        header, arrays, masks = load_checkpoint(path)
        if header.get("strategy") != self.strategy:
            raise StateError(f"{path}: checkpoint of a '{header.get('strategy')}' run, not '{self.strategy}'")
        self.model.load_state_dict({k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
        self.optimizer.load_state_dict(
            {k[len("velocity/"):]: v for k, v in arrays.items() if k.startswith("velocity/")},
            header["optimizer_steps"],
        )
        self.criterion.load_state(
            {k[len("criterion/"):]: v for k, v in arrays.items() if k.startswith("criterion/")},
            header["criterion_steps"],
        )
        partition = self.partition.copy()
        partition.load_masks(masks, source=path)
        self.partition = partition
        self._forward = None
        self._update = None
        self.resource_now = self._measure()
        self.stages.state = StageState(**header["stage_state"])
        self._stage = StageName(header["stage"]) if header.get("stage") else None
        self.omega = header["omega"]
        self.quotas = {k: int(v) for k, v in header["quotas"].items()}
        self.nan_streak = header["nan_streak"]
        self.last_loss = header["last_loss"]
        self.cycles = header["cycles"]
        self.grow_rng.bit_generator.state = header["grow_rng"]
        self.ledger.restore(LedgerSnapshot(**header["ledger"]))
        self.ledger.zeta_p = header["zeta_p"]
        self.ledger.zeta_p_history = list(header["zeta_p_history"])
        self.event_log.truncate_after(header["event_seq"])


def run_training(
    model: Model,
    partition: ParamPartition,
    schedule: IeeSchedule,
    criterion: ImportanceCriterion,
    dataset: Dataset,
    optimizer: Optimizer,
    settings: Optional[EngineSettings] = None,
    event_log: Optional[EventLog] = None,
    **kwargs,
) -> Tuple[RunResult, EventLog]:
    """
    Run the full cycle loop on an initialized partition.

    Args:
        model: Model to train
        partition: Initial partition (its resource defines Psi unless settings pin it)
        schedule: Cycle lengths and update-period bounds
        criterion: Importance criterion shared by prune and grow
        dataset: Training / test data
        optimizer: Optimizer
        settings: Engine options
        event_log: Destination log (memory-only when omitted)
        **kwargs: Forwarded to ``SparseTrainer`` (latency_table, state_manager, seed)

    Returns:
        (RunResult, EventLog)
    """
    trainer = SparseTrainer(
        model, partition, optimizer, dataset, schedule, criterion,
        settings=settings, event_log=event_log, **kwargs,
    )
    result = trainer.run()
    return result, trainer.event_log
