"""
IEE sparse-training engine - builds and runs one experiment from its config
"""

import logging
from pathlib import Path
from typing import Any, Dict, Optional

from .orchestrator import EngineSettings, RunResult, SparseTrainer, selection_for
from ..audit.event_log import EventLog
from ..errors import ConfigError, StateError
from ..harness.config import ExperimentConfig, Strategy, config_to_dict, dump_config
from ..harness.datasets import Dataset, load_dataset
from ..importance.criteria import build_criterion
from ..nn.model import Model, build_model
from ..nn.optim import LRSchedule, Optimizer
from ..phases.stage_manager import IeeSchedule
from ..reproducibility.state_manager import StateManager, load_checkpoint, seed_stream
from ..sparsity.distributions import PlanScope, init_partition
from ..sparsity.masks import ParamPartition
from ..sparsity.resource import BudgetKind
from ..structured.channel_selection import init_latency_partition
from ..structured.latency_table import LatencyTable, load_latency_table

logger = logging.getLogger(__name__)


def warm_start(model: Model, partition: ParamPartition, path: str, load_masks: bool = False):
    """
    Load parameters (and optionally masks) from a checkpoint before training.

    Args:
        model: Freshly built model
        partition: Its initial partition, updated in place when ``load_masks``
        path: Checkpoint written by a previous run
        load_masks: Also take the checkpoint's masks
    """
    _, arrays, masks = load_checkpoint(path)
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    if not params:
        raise StateError(f"{path}: checkpoint holds no parameters")
    model.load_state_dict(params)
    if load_masks:
        partition.load_masks(masks, source=path)


class IeeEngine:
    """
    One experiment at one seed.

    Wires the dataset, model, initial partition, optimizer, criterion, and
    event log described by an ``ExperimentConfig`` into the trainer of its
    strategy. With ``run_dir`` the run writes ``config.yaml``,
    ``events.jsonl``, checkpoints and ``manifest.json`` there.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        seed: Optional[int] = None,
        run_dir: Optional[str] = None,
        init_from: Optional[str] = None,
        init_masks: bool = False,
        dataset: Optional[Dataset] = None,
        resume_from: Optional[str] = None,
    ):
        """
        Build every component of the run.

        Args:
            config: Resolved experiment
            seed: Root seed (defaults to the config's first seed)
            run_dir: Output directory; memory-only event log when omitted
            init_from: Warm-start checkpoint
            init_masks: Take masks from ``init_from`` as well
            dataset: Preloaded dataset (ablation cells share one)
            resume_from: Checkpoint to continue from; "latest" picks the
                run directory's newest one
        """
        self.config = config
        self.seed = config.seeds[0] if seed is None else seed
        self.dataset = dataset or load_dataset(config.data, self.seed)
        if tuple(config.model.input_shape) != self.dataset.input_shape:
            raise ConfigError(
                f"model.input_shape {tuple(config.model.input_shape)} does not match "
                f"the dataset's {self.dataset.input_shape}"
            )
        self.state_manager = StateManager(run_dir, self.seed, config_to_dict(config)) if run_dir else None

        self.model = build_model(config.model, seed_stream(self.seed, "init", 0))
        self.latency_table: Optional[LatencyTable] = None
        structured = config.plan.scope == PlanScope.CHANNEL
        if structured:
            self.latency_table = load_latency_table(config.structured.table)
            self.partition = init_latency_partition(
                self.model, self.latency_table, config.structured.budget_ms,
                seed_stream(self.seed, "init", 1), config.structured.quantum,
            )
        else:
            self.partition = init_partition(self.model, config.plan, seed_stream(self.seed, "init", 1))
        if init_from:
            warm_start(self.model, self.partition, init_from, init_masks)

        total_iters = config.schedule.epochs * self.dataset.batches_per_epoch
        self.optimizer = Optimizer(
            schedule=LRSchedule(
                base_lr=config.optimizer.lr,
                total_iters=total_iters,
                warmup_fraction=config.optimizer.warmup_fraction,
                min_lr=config.optimizer.min_lr,
            ),
            momentum=config.optimizer.momentum,
            weight_decay=config.optimizer.weight_decay,
        )
        sched = config.schedule
        self.schedule = IeeSchedule(
            H=sched.H,
            J=sched.J,
            Q=sched.Q,
            total_train_iters=total_iters,
            stop_fraction=sched.structured_stop_epoch if structured else sched.stop_fraction,
            T=sched.T,
        )
        self.settings = EngineSettings(
            freeze_active=sched.freeze_active,
            grow_criterion=sched.grow_criterion,
            grow_init=sched.grow_init,
            omega_fraction=sched.omega_fraction,
            nan_patience=sched.nan_patience,
            selection=selection_for(config.plan),
            budget_kind=BudgetKind.LATENCY if structured else BudgetKind.PARAM_COUNT,
            psi=config.structured.budget_ms if structured else None,
            quantum=config.structured.quantum,
            log_iterations=config.log.iterations,
            log_snapshots=config.log.snapshots,
            checkpoint_every=config.log.checkpoint_every,
        )
        if resume_from == "latest":
            latest = self.state_manager.latest_checkpoint() if self.state_manager else None
            if latest is None:
                raise StateError("no checkpoint to resume from")
            resume_from = str(latest)
        self.trainer = self._build_trainer(resume=resume_from is not None)
        if resume_from is not None:
            self.trainer.restore(resume_from)

    def _event_log(self, resume: bool) -> EventLog:
        if self.state_manager is None:
            return EventLog()
        path = self.state_manager.events_path
        if not resume and path.exists():
            path.unlink()
        return EventLog(str(path), sync=self.config.log.sync)

    def _build_trainer(self, resume: bool = False) -> SparseTrainer:
        common = dict(
            settings=self.settings,
            event_log=self._event_log(resume),
            latency_table=self.latency_table,
            state_manager=self.state_manager,
            seed=self.seed,
        )
        criterion = build_criterion(self.config.importance)
        if self.config.strategy == Strategy.IEE:
            return SparseTrainer(
                self.model, self.partition, self.optimizer, self.dataset, self.schedule, criterion, **common,
            )
        from ..baselines.strategies import BaselineSchedule, BaselineTrainer

        baseline = BaselineSchedule(
            kind=self.config.strategy.value,
            interval=self.config.baseline_interval(),
            alpha0=self.config.baseline.alpha0,
            total_train_iters=self.schedule.total_train_iters,
            stop_fraction=self.config.baseline.stop_fraction,
        )
        return BaselineTrainer(
            self.model, self.partition, self.optimizer, self.dataset, baseline, criterion, **common,
        )

    def execute(self) -> RunResult:
        """
        Train to completion and write the run directory.

        Returns:
            RunResult; ``diverged`` is set when the loss stayed non-finite
        """
        if self.state_manager is not None:
            dump_config(self.config, str(self.state_manager.config_path))
        logger.info("run %s seed %d: %s", self.config.name, self.seed, self.config.strategy.value)
        result = self.trainer.run()
        if self.state_manager is not None:
            self.state_manager.write_manifest(self.config.strategy.value, result.metrics(), result.diverged)
        return result

    @property
    def event_log(self) -> EventLog:
        return self.trainer.event_log

    def get_status(self) -> Dict[str, Any]:
        """
        Get current run status.

        Returns:
            Dict with position in the schedule and resource usage
        """
        trainer = self.trainer
        return {
            "name": self.config.name,
            "strategy": self.config.strategy.value,
            "seed": self.seed,
            "iteration": trainer.stages.state.i,
            "total_train_iters": self.schedule.total_train_iters,
            "t": trainer.stages.state.t,
            "T": self.schedule.T,
            "stage": trainer.stages.state.stage.value,
            "active_count": trainer.partition.active_count,
            "psi": trainer.psi,
            "resource": trainer.resource_now,
            "flops_cum": trainer.ledger.cumulative,
        }

    def get_audit_trail(self) -> Dict[str, Any]:
        """
        Get event-log information.

        Returns:
            Dict with chain validity and record counts by kind
        """
        log = self.event_log
        counts: Dict[str, int] = {}
        for record in log.records:
            counts[record.kind.value] = counts.get(record.kind.value, 0) + 1
        return {
            "chain_valid": log.verify_chain(),
            "total_entries": len(log.records),
            "by_kind": counts,
            "path": str(log.path) if log.path else None,
        }

    def get_reproducibility_info(self) -> Dict[str, Any]:
        if self.state_manager is None:
            return {"seed": self.seed, "run_dir": None}
        return {
            "seed": self.seed,
            "run_dir": str(self.state_manager.run_dir),
            "config_hash": self.state_manager.config_hash,
        }


def run_dir_for(config: ExperimentConfig, seed: int, suffix: str = "") -> str:
    """``<output_dir>/<name>[-suffix]/seed-<seed>``"""
    name = f"{config.name}-{suffix}" if suffix else config.name
    return str(Path(config.output_dir) / name / f"seed-{seed}")
