"""Experiment harness package"""
from .config import (
    BaselineSection,
    ExperimentConfig,
    LogSection,
    OptimizerSection,
    ScheduleSection,
    Strategy,
    StructuredSection,
    config_to_dict,
    dump_config,
    load_config,
    override,
    parse_config,
)
from .datasets import (
    Dataset,
    DatasetKind,
    DatasetSpec,
    load_dataset,
    read_cifar_binary,
    read_idx,
    synthetic_arrays,
    write_idx,
)

__all__ = [
    "BaselineSection",
    "Dataset",
    "DatasetKind",
    "DatasetSpec",
    "ExperimentConfig",
    "LogSection",
    "OptimizerSection",
    "ScheduleSection",
    "Strategy",
    "StructuredSection",
    "config_to_dict",
    "dump_config",
    "load_config",
    "load_dataset",
    "override",
    "parse_config",
    "read_cifar_binary",
    "read_idx",
    "synthetic_arrays",
    "write_idx",
]
