"""
Ablation grids: one run per (cell, seed), collected into CSV tables
"""

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .config import ExperimentConfig, config_to_dict, override, parse_config
from ..errors import ConfigError, IeeError

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["status", "test_accuracy", "final_loss", "flops_per_sample", "mean_survival", "message"]


class AblationGrid(BaseModel):
    """
    Axes of an ablation, as dotted config keys mapped to the values to try.

    Cells are the Cartesian product of the axes in file order. Explicit
    ``cells`` (one override mapping each) list rows that are not a product;
    with both, every explicit cell is crossed with the axes.
    """
    model_config = ConfigDict(extra="forbid")

    axes: Dict[str, List[Any]] = Field(default_factory=dict)
    cells: List[Dict[str, Any]] = Field(default_factory=list)
    seeds: Optional[List[int]] = None
    workers: int = Field(default=1, ge=1)


class CellResult(BaseModel):
    """Outcome of one seed of one cell"""
    cell: int
    seed: int
    overrides: Dict[str, Any]
    status: str = "ok"
    test_accuracy: Optional[float] = None
    final_loss: Optional[float] = None
    flops_per_sample: Optional[float] = None
    mean_survival: Optional[float] = None
    message: str = ""


def load_grid(path: str) -> AblationGrid:
    """
    Load an ablation grid YAML file.

    Raises:
        ConfigError: missing file, bad YAML, or unknown keys
    """
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"grid not found: {path}")
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        return AblationGrid.model_validate(data)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"{path}: {e.errors()[0]['msg']}") from e


def grid_cells(grid: AblationGrid) -> List[Dict[str, Any]]:
    keys = list(grid.axes)
    product = [dict(zip(keys, values)) for values in itertools.product(*(grid.axes[k] for k in keys))]
    return [{**explicit, **combo} for explicit in (grid.cells or [{}]) for combo in product]


def cell_keys(cells: List[Dict[str, Any]]) -> List[str]:
    """Every override key used by any cell, in first-seen order."""
    keys: Dict[str, None] = {}
    for cell in cells:
        keys.update(dict.fromkeys(cell))
    return list(keys)


def run_cell(job) -> Dict[str, Any]:
    """Worker: train one (cell, seed) and summarize it. Divergence is a result, not a failure."""
    from ..core.engine import IeeEngine
    from ..metrics.report import summarize

    config_data, overrides, cell, seed, run_dir = job
    result = CellResult(cell=cell, seed=seed, overrides=overrides)
    try:
        config = override(parse_config(config_data), overrides)
        engine = IeeEngine(config, seed=seed, run_dir=run_dir)
        outcome = engine.execute()
        summary = summarize(engine.event_log.records)
        result.final_loss = outcome.final_loss
        result.flops_per_sample = outcome.flops.per_sample
        result.mean_survival = summary.mean_survival
        if outcome.diverged:
            result.status = "NaN"
            result.message = "loss diverged"
        else:
            result.test_accuracy = outcome.test_accuracy
    except IeeError as e:
        result.status = "error"
        result.message = str(e)
    return result.model_dump(mode="json")


def ablate(
    config: ExperimentConfig,
    grid: AblationGrid,
    out_dir: Optional[str] = None,
    workers: Optional[int] = None,
) -> List[CellResult]:
    """
    Run every cell of a grid for every seed.

    Args:
        config: Base experiment
        grid: Axes to vary
        out_dir: Where run directories and ``results.csv`` / ``summary.csv`` go
            (defaults to ``<output_dir>/<name>-ablation``)
        workers: Parallel processes (defaults to the grid's)

    Returns:
        One CellResult per (cell, seed), ordered by cell then seed
    """
    out = Path(out_dir or Path(config.output_dir) / f"{config.name}-ablation")
    seeds = grid.seeds or config.seeds
    cells = grid_cells(grid)
    base = config_to_dict(config)
    for overrides in cells:
        override(config, overrides)
    jobs = [
        (base, overrides, index, seed, str(out / f"cell-{index:02d}" / f"seed-{seed}"))
        for index, overrides in enumerate(cells)
        for seed in seeds
    ]
    count = workers or grid.workers
    if count <= 1:
        raw = [run_cell(job) for job in jobs]
    else:
        raw = []
        with ProcessPoolExecutor(max_workers=count) as pool:
            futures = [pool.submit(run_cell, job) for job in jobs]
            for future in as_completed(futures):
                raw.append(future.result())
    results = sorted((CellResult(**r) for r in raw), key=lambda r: (r.cell, seeds.index(r.seed)))
    write_results(results, cell_keys(cells), str(out / "results.csv"))
    write_cell_summary(results, cells, str(out / "summary.csv"))
    return results


def _cell_value(value: Any) -> Any:
    if value is None:
        return ""
    return value


def write_results(results: List[CellResult], axes: List[str], path: str):
    """One row per (cell, seed); diverged cells show ``NaN`` accuracy."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["cell", "seed"] + axes + RESULT_COLUMNS)
        for r in results:
            accuracy = "NaN" if r.status == "NaN" else _cell_value(r.test_accuracy)
            writer.writerow(
                [r.cell, r.seed]
                + [_cell_value(r.overrides.get(a)) for a in axes]
                + [r.status, accuracy, _cell_value(r.final_loss), _cell_value(r.flops_per_sample),
                   _cell_value(r.mean_survival), r.message]
            )


def write_cell_summary(results: List[CellResult], cells: List[Dict[str, Any]], path: str):
    """Mean accuracy per cell over seeds; NaN when any seed diverged."""
    axes = cell_keys(cells)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["cell"] + axes + ["seeds", "diverged", "errors", "mean_accuracy", "min_accuracy", "max_accuracy"])
        for index, overrides in enumerate(cells):
            rows = [r for r in results if r.cell == index]
            diverged = sum(r.status == "NaN" for r in rows)
            errors = sum(r.status == "error" for r in rows)
            accuracies = [r.test_accuracy for r in rows if r.status == "ok" and r.test_accuracy is not None]
            if diverged or not accuracies:
                stats = [math.nan] * 3
            else:
                stats = [float(np.mean(accuracies)), float(np.min(accuracies)), float(np.max(accuracies))]
            writer.writerow(
                [index] + [overrides.get(a) for a in axes]
                + [len(rows), diverged, errors] + ["NaN" if math.isnan(s) else s for s in stats]
            )
