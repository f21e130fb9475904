"""
IEE sparse-training engine (v1.0)

Trains sparse networks by cycling through estimate, prune, improve,
reactivate-and-explore, and grow stages under a cosine-decaying update
budget, with RigL / SET / static baselines, a per-stage FLOPs ledger,
latency-constrained channel pruning, and a BLAKE3-chained event log.

Usage:
    python -m iee_sparse_engine train -c config/mnist_mlp.yaml --seed 0
    python -m iee_sparse_engine ablate -c config/mnist_mlp.yaml --grid config/ablation_grid.yaml
    python -m iee_sparse_engine flops -c config/mnist_mlp.yaml
    python -m iee_sparse_engine prune-plan -c config/cnn_structured.yaml --table runs/latency.csv --budget-ms 2.0 --synthetic
    python -m iee_sparse_engine report runs/mnist-mlp/seed-0/events.jsonl -o runs/report
"""

__version__ = "1.0.0"

from .core.engine import IeeEngine
from .core.orchestrator import RunResult, SparseTrainer
from .phases.stage_manager import IeeSchedule, StageManager
from .baselines.strategies import BaselineTrainer
from .ledger.flops_ledger import FlopsLedger
from .reproducibility.state_manager import StateManager
from .audit.event_log import EventLog
from .harness.config import ExperimentConfig, load_config
from .harness.ablation import ablate
from .errors import IeeError
from .__main__ import main as cli_main

__all__ = [
    "IeeEngine",
    "SparseTrainer",
    "RunResult",
    "IeeSchedule",
    "StageManager",
    "BaselineTrainer",
    "FlopsLedger",
    "StateManager",
    "EventLog",
    "ExperimentConfig",
    "load_config",
    "ablate",
    "IeeError",
    "cli_main",
]
