"""Core package"""
from .orchestrator import (
    EngineSettings,
    RunResult,
    SelectionRule,
    SparseTrainer,
    evaluate,
    explore_stage,
    grow_step,
    improve_stage,
    prune_step,
    run_training,
    selection_for,
    split_budget,
    train_batch,
)
from .engine import IeeEngine, run_dir_for, warm_start

__all__ = [
    "EngineSettings",
    "IeeEngine",
    "RunResult",
    "SelectionRule",
    "SparseTrainer",
    "evaluate",
    "explore_stage",
    "grow_step",
    "improve_stage",
    "prune_step",
    "run_dir_for",
    "run_training",
    "selection_for",
    "split_budget",
    "train_batch",
    "warm_start",
]
