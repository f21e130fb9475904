"""Reproducibility package"""
from .state_manager import (
    RunManifest,
    StateManager,
    content_hash,
    load_checkpoint,
    package_hash,
    read_manifest,
    save_checkpoint,
    seed_stream,
)

__all__ = [
    "RunManifest",
    "StateManager",
    "content_hash",
    "load_checkpoint",
    "package_hash",
    "read_manifest",
    "save_checkpoint",
    "seed_stream",
]
