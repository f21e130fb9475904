"""
Reference sparse-training strategies: static masks, SET random growth, RigL gradient growth
"""

import math
from enum import Enum
from typing import Dict, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from ..audit.event_log import EventKind, SnapshotPhase
from ..core.orchestrator import SparseTrainer
from ..errors import UnsupportedScopeError
from ..importance.criteria import rigl_grow_score
from ..ledger.flops_ledger import CostStage
from ..nn.model import Model
from ..phases.stage_manager import IterationPlan, StageName, StageState
from ..reproducibility.state_manager import seed_stream
from ..sparsity.masks import Granularity, ParamPartition


class BaselineKind(str, Enum):
    """Update rule of a baseline run"""
    STATIC = "static"
    SET = "set"
    RIGL = "rigl"


class BaselineSchedule(BaseModel):
    """
    Update every ``interval`` iterations until ``stop_fraction`` of training.

    The update fraction anneals as ``alpha0 / 2 * (1 + cos(pi * t / T))``.
    """
    kind: BaselineKind = BaselineKind.RIGL
    interval: int = Field(default=450, gt=0)
    alpha0: float = Field(default=0.3, ge=0.0, lt=1.0)
    total_train_iters: int = Field(default=1, ge=0)
    stop_fraction: float = Field(default=0.75, gt=0.0, le=1.0)

    @property
    def T(self) -> int:
        if self.kind == BaselineKind.STATIC:
            return 0
        return int(math.floor(self.stop_fraction * self.total_train_iters / self.interval + 1e-9))

    @property
    def delta_t(self) -> int:
        return self.interval

    @property
    def H(self) -> int:
        return self.interval

    @property
    def J(self) -> int:
        return 0

    @property
    def Q(self) -> int:
        return 0

    def fraction_at(self, t: int) -> float:
        if self.T <= 0:
            return 0.0
        return self.alpha0 / 2.0 * (1.0 + math.cos(math.pi * t / self.T))


class BaselineStageManager:
    """Marks every ``interval``-th iteration (while ``t < T``) as an update."""

    def __init__(self, schedule: BaselineSchedule, state: Optional[StageState] = None):
        self.schedule = schedule
        self.state = state or StageState(stage=StageName.IMPROVE)

    def advance(self) -> IterationPlan:
        state = self.state
        state.i += 1
        plan = IterationPlan(iteration=state.i, stage=StageName.IMPROVE, t=state.t)
        if state.t < self.schedule.T and state.i % self.schedule.interval == 0:
            plan.prune = plan.grow = True
            state.t += 1
        plan.stage = StageName.POST_PERIOD if state.t >= self.schedule.T else StageName.IMPROVE
        state.stage = plan.stage
        return plan


def _check_weight_scope(partition: ParamPartition):
    if partition.granularity == Granularity.CHANNEL:
        raise UnsupportedScopeError("baseline updates support weight scope only")


def _magnitude_drop(model: Model, partition: ParamPartition, fraction: float) -> Dict[str, np.ndarray]:
    """Per tensor, the ``int(fraction * active)`` smallest-magnitude active entries (ties by index)."""
    params = model.named_parameters()
    dropped: Dict[str, np.ndarray] = {}
    for name, mask in partition.masks.items():
        bits = mask.bits.reshape(-1).astype(bool)
        active = np.flatnonzero(bits)
        k = min(int(active.size * fraction), bits.size - active.size)
        scores = np.abs(params[name].data.reshape(-1)[active]).astype(np.float64)
        dropped[name] = np.sort(active[np.lexsort((active, scores))[:k]])
    return dropped


def _apply(partition: ParamPartition, indices: Dict[str, np.ndarray], value: bool) -> ParamPartition:
    result = partition.copy()
    for name, idx in indices.items():
        result.masks[name].bits.reshape(-1)[idx] = value
    return result


def rigl_update(
    model: Model,
    partition: ParamPartition,
    inputs: np.ndarray,
    targets: np.ndarray,
    fraction: float,
) -> Tuple[ParamPartition, Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """
    Drop the smallest-magnitude active weights, grow as many by dense-gradient magnitude.

    The grow candidates are the entries inactive before the drop, so the
    grown and dropped sets never overlap. Values are not touched here.

    Args:
        model: Model
        partition: Weight partition
        inputs: Mini-batch inputs for the gradient score
        targets: Mini-batch targets
        fraction: Share of each tensor's active entries to replace

    Returns:
        (new partition, dropped indices, grown indices) per tensor
    """
    _check_weight_scope(partition)
    dropped = _magnitude_drop(model, partition, fraction)
    if not any(idx.size for idx in dropped.values()):
        empty = {name: np.zeros(0, dtype=np.int64) for name in partition.names()}
        return partition.copy(), dropped, empty
    scores = rigl_grow_score(model, partition, inputs, targets).values
    grown: Dict[str, np.ndarray] = {}
    for name, mask in partition.masks.items():
        inactive = np.flatnonzero(~mask.bits.reshape(-1).astype(bool))
        s = np.asarray(scores[name], dtype=np.float64).reshape(-1)[inactive]
        grown[name] = np.sort(inactive[np.lexsort((inactive, -s))[:dropped[name].size]])
    return _apply(_apply(partition, dropped, False), grown, True), dropped, grown


def set_update(
    model: Model,
    partition: ParamPartition,
    fraction: float,
    rng: Union[np.random.Generator, int],
) -> Tuple[ParamPartition, Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """
    Drop the smallest-magnitude active weights, grow as many uniformly at random.

    Args:
        model: Model
        partition: Weight partition
        fraction: Share of each tensor's active entries to replace
        rng: Generator (or seed) for the random growth

    Returns:
        (new partition, dropped indices, grown indices) per tensor
    """
    _check_weight_scope(partition)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    dropped = _magnitude_drop(model, partition, fraction)
    grown: Dict[str, np.ndarray] = {}
    for name, mask in partition.masks.items():
        inactive = np.flatnonzero(~mask.bits.reshape(-1).astype(bool))
        k = dropped[name].size
        grown[name] = np.sort(rng.choice(inactive, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    return _apply(_apply(partition, dropped, False), grown, True), dropped, grown


class BaselineTrainer(SparseTrainer):
    """
    Baseline run on the same loop, ledger, and event-log schema as IEE.

    Update iterations log the same prune / grow events and after-prune /
    after-grow snapshots, so the metrics apply to every strategy. Grown
    weights start at zero.
    """

    def __init__(self, model, partition, optimizer, dataset, schedule: BaselineSchedule, criterion, **kwargs):
        super().__init__(model, partition, optimizer, dataset, schedule, criterion, **kwargs)
        self.stages = BaselineStageManager(schedule)

    @property
    def strategy(self) -> str:
        return self.schedule.kind.value

    def apply_mask_events(self, plan: IterationPlan, x: np.ndarray, y: np.ndarray):
        if not plan.prune:
            return
        t = plan.t
        fraction = self.schedule.fraction_at(t)
        before = self.partition
        if self.schedule.kind == BaselineKind.RIGL:
            # drawn per step, outside the training stream
            gx, gy = self.dataset.sample_batch(seed_stream(self.seed, "rigl-batch", t))
            after, dropped, grown = rigl_update(self.model, before, gx, gy, fraction)
            self.ledger.charge(CostStage.DENSE_GRAD, len(gx))
        else:
            after, dropped, grown = set_update(self.model, before, fraction, self.grow_rng)
        moved = int(sum(idx.size for idx in dropped.values()))
        self.omega = float(moved)
        self._set_partition(_apply(before, dropped, False))
        self._emit(
            EventKind.PRUNE, t=t,
            data={"moved": moved, "fraction": fraction, "per_layer": {k: int(v.size) for k, v in dropped.items()}},
        )
        self._snapshot(SnapshotPhase.AFTER_PRUNE, t)
        self._zero_grown(grown)
        self._set_partition(after)
        self.cycles += 1
        self._emit(
            EventKind.GROW, t=t,
            data={"moved": int(sum(idx.size for idx in grown.values())), "per_layer": {k: int(v.size) for k, v in grown.items()}},
        )
        self._snapshot(SnapshotPhase.AFTER_GROW, t)


def run_baseline(
    model: Model,
    partition: ParamPartition,
    schedule: BaselineSchedule,
    criterion,
    dataset,
    optimizer,
    **kwargs,
):
    """
    Train a baseline to completion.

    Args:
        model: Model
        partition: Initial partition
        schedule: Baseline kind and update schedule
        criterion: Importance criterion (kept for schema parity; baselines use their own scores)
        dataset: Training / test data
        optimizer: Optimizer
        **kwargs: Forwarded to ``BaselineTrainer`` (settings, event_log, seed, ...)

    Returns:
        (RunResult, EventLog)
    """
    trainer = BaselineTrainer(model, partition, optimizer, dataset, schedule, criterion, **kwargs)
    result = trainer.run()
    return result, trainer.event_log
