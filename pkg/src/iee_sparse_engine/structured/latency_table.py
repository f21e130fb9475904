"""
Per-layer latency lookup tables T^l(p_in, p_out)
"""

import csv
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import LatencyTableError

logger = logging.getLogger(__name__)

CSV_HEADER = ["layer", "p_in", "p_out", "latency_ms"]


class LatencyTable:
    """
    Dense latency grids, one per channel-prunable layer in model order.

    ``grids[l][p_in, p_out]`` is the latency in milliseconds; entries below a
    layer's smallest tabulated ``p_in`` are NaN and may not be queried. A
    missing ``p_out = 0`` column reads as 0 ms.
    """

    def __init__(self, grids: List[np.ndarray], min_in: Optional[List[int]] = None, repaired: int = 0):
        self.grids = [np.asarray(g, dtype=np.float64) for g in grids]
        self.min_in = min_in or [0] * len(self.grids)
        self.repaired = repaired

    @property
    def num_layers(self) -> int:
        return len(self.grids)

    @property
    def input_channels(self) -> int:
        """Upstream channel count of the first layer (its largest tabulated ``p_in``)."""
        return self.grids[0].shape[0] - 1

    def max_out(self, layer: int) -> int:
        return self.grids[layer].shape[1] - 1

    def max_in(self, layer: int) -> int:
        return self.grids[layer].shape[0] - 1

    def latency(self, layer: int, p_in: int, p_out: int) -> float:
        grid = self.grids[layer]
        if not (0 <= p_in < grid.shape[0] and 0 <= p_out < grid.shape[1]):
            raise LatencyTableError(
                f"layer {layer}: ({p_in}, {p_out}) outside table range "
                f"p_in<={grid.shape[0] - 1}, p_out<={grid.shape[1] - 1}"
            )
        value = grid[p_in, p_out]
        if np.isnan(value):
            raise LatencyTableError(f"layer {layer}: no latency for p_in={p_in}, p_out={p_out}")
        return float(value)

    def total_latency(self, counts: Sequence[int], input_channels: Optional[int] = None) -> float:
        """Sum over layers of ``T^l(p^{l-1}, p^l)`` with ``p^0`` the network input channels."""
        if len(counts) != self.num_layers:
            raise LatencyTableError(f"table has {self.num_layers} layers, got {len(counts)} channel counts")
        upstream = self.input_channels if input_channels is None else input_channels
        total = 0.0
        for layer, count in enumerate(counts):
            total += self.latency(layer, int(upstream), int(count))
            upstream = count
        return total

    def upstream_counts(self, counts: Sequence[int]) -> List[int]:
        return [self.input_channels] + [int(c) for c in counts[:-1]]

    def to_rows(self) -> List[Tuple[int, int, int, float]]:
        rows = []
        for layer, grid in enumerate(self.grids):
            for p_in in range(self.min_in[layer], grid.shape[0]):
                for p_out in range(grid.shape[1]):
                    rows.append((layer, p_in, p_out, float(grid[p_in, p_out])))
        return rows

    def write_csv(self, path: str):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for layer, p_in, p_out, value in self.to_rows():
                writer.writerow([layer, p_in, p_out, f"{value:.6f}"])


def _repair_monotone(grid: np.ndarray) -> Tuple[np.ndarray, int]:
    """Running max along p_out then p_in; returns the repaired grid and changed-cell count."""
    filled = np.where(np.isnan(grid), -np.inf, grid)
    repaired = np.maximum.accumulate(np.maximum.accumulate(filled, axis=1), axis=0)
    repaired = np.where(np.isnan(grid), np.nan, repaired)
    changed = int(np.sum(~np.isnan(grid) & (repaired != grid)))
    return repaired, changed


def load_latency_table(path: str) -> LatencyTable:
    """
    Parse and validate a ``layer,p_in,p_out,latency_ms`` CSV.

    Every layer must tabulate the full grid
    ``[min p_in .. max p_in] x [min p_out .. max p_out]``. Cells that break
    monotonicity are raised to the running max of their predecessors with
    a warning.

    Args:
        path: CSV file path

    Returns:
        Validated LatencyTable
    """
    p = Path(path)
    if not p.exists():
        raise LatencyTableError(f"latency table not found: {path}")
    cells: Dict[int, Dict[Tuple[int, int], float]] = {}
    with open(p, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != CSV_HEADER:
            raise LatencyTableError(f"latency table header must be '{','.join(CSV_HEADER)}', got {reader.fieldnames}")
        for line_no, row in enumerate(reader, start=2):
            try:
                layer, p_in, p_out = int(row["layer"]), int(row["p_in"]), int(row["p_out"])
                value = float(row["latency_ms"])
            except (TypeError, ValueError) as e:
                raise LatencyTableError(f"{path}:{line_no}: malformed row {row}: {e}")
            if p_in < 0 or p_out < 0 or not math.isfinite(value):
                raise LatencyTableError(f"{path}:{line_no}: invalid cell {row}")
            cells.setdefault(layer, {})[(p_in, p_out)] = value
    if not cells:
        raise LatencyTableError(f"latency table {path} has no rows")
    layers = sorted(cells)
    if layers != list(range(len(layers))):
        raise LatencyTableError(f"layer indices must be 0..{len(layers) - 1}, got {layers}")

    grids, min_in, missing = [], [], []
    for layer in layers:
        layer_cells = cells[layer]
        ins = [k[0] for k in layer_cells]
        outs = [k[1] for k in layer_cells]
        lo_in, hi_in, lo_out, hi_out = min(ins), max(ins), min(outs), max(outs)
        grid = np.full((hi_in + 1, hi_out + 1), np.nan)
        for p_in in range(lo_in, hi_in + 1):
            for p_out in range(lo_out, hi_out + 1):
                if (p_in, p_out) in layer_cells:
                    grid[p_in, p_out] = layer_cells[(p_in, p_out)]
                else:
                    missing.append((layer, p_in, p_out))
        if lo_out > 0:
            grid[lo_in:, 0] = 0.0
        grids.append(grid)
        min_in.append(lo_in)
    if missing:
        listed = ", ".join(f"(layer={l}, p_in={i}, p_out={o})" for l, i, o in missing[:20])
        more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
        raise LatencyTableError(f"latency table {path} is missing {len(missing)} cells: {listed}{more}")

    repaired_total = 0
    for index, grid in enumerate(grids):
        grids[index], changed = _repair_monotone(grid)
        if changed:
            logger.warning("latency table layer %d: repaired %d non-monotone cells", index, changed)
        repaired_total += changed
    return LatencyTable(grids, min_in, repaired=repaired_total)


def synthetic_latency_table(
    channels: Sequence[int],
    input_channels: int,
    a: float = 0.001,
    b: float = 0.05,
    quantum: float = 0.01,
    layer_scale: Optional[Sequence[float]] = None,
) -> LatencyTable:
    """
    Staircase table ``q * ceil((a * s_l * p_in * p_out + b) / q)`` per layer.

    Args:
        channels: Full output channel count of each channel-prunable layer
        input_channels: Network input channels (``p_in`` of the first layer)
        a: Cost per input-output channel pair
        b: Fixed per-layer overhead
        quantum: Step size of the staircase
        layer_scale: Optional multiplier ``s_l`` per layer (e.g. spatial size)

    Returns:
        LatencyTable over the complete grid
    """
    grids = []
    upstream = input_channels
    scales = list(layer_scale) if layer_scale is not None else [1.0] * len(channels)
    for layer, out in enumerate(channels):
        p_in = np.arange(upstream + 1)[:, None]
        p_out = np.arange(out + 1)[None, :]
        raw = a * scales[layer] * p_in * p_out + b
        grid = quantum * np.ceil(np.round(raw / quantum, 9))
        grids.append(grid)
        upstream = out
    return LatencyTable(grids)
