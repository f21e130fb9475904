"""
N:M structured masks: N of every M contiguous input-dimension entries are zeroed
"""

from typing import Optional, Tuple

import numpy as np

from .masks import Granularity, Mask
from ..errors import InvalidPlanError


def _rows_last(array: np.ndarray) -> np.ndarray:
    """Move the input dimension (axis 1) last and flatten the rest into rows."""
    if array.ndim == 2:
        return array
    moved = np.moveaxis(array, 1, -1)
    return moved.reshape(-1, array.shape[1])


def _restore(rows: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if len(shape) == 2:
        return rows.reshape(shape)
    moved_shape = (shape[0],) + tuple(shape[2:]) + (shape[1],)
    return np.moveaxis(rows.reshape(moved_shape), -1, 1)


def nm_group_ids(shape: Tuple[int, ...], m: int) -> np.ndarray:
    """
    Group index of every entry of a (out, in[, kh, kw]) tensor.

    Groups are M consecutive input-dimension entries of one row; a
    trailing group shorter than M gets its own id.
    """
    n_in = shape[1]
    per_row = -(-n_in // m)
    n_rows = int(np.prod(shape)) // n_in
    rows = np.arange(n_rows)[:, None] * per_row + (np.arange(n_in) // m)[None, :]
    return _restore(rows, tuple(shape))


def apply_nm_mask(tensor: np.ndarray, n: int, m: int, importance: Optional[np.ndarray] = None, name: str = "") -> Mask:
    """
    Zero the N least important entries of every full group of M.

    Args:
        tensor: Weight array shaped (out, in) or (out, in, kh, kw)
        n: Entries zeroed per group
        m: Group length along the input dimension
        importance: Scores aligned with ``tensor``; defaults to ``|tensor|``
        name: Mask name

    Returns:
        Mask with per-group capacity M-N (remainder groups fully active)
    """
    if m <= 0 or n < 0 or n >= m:
        raise InvalidPlanError(f"invalid N:M pattern {n}:{m}; need 0 <= N < M")
    tensor = np.asarray(tensor)
    original_shape = tensor.shape
    scores = np.abs(tensor) if importance is None else np.asarray(importance)
    if tensor.ndim == 1:
        tensor, scores = tensor[None, :], scores[None, :]
    if tensor.ndim not in (2, 4):
        raise InvalidPlanError(f"N:M masks need a 1-D, 2-D or 4-D weight, got shape {original_shape}")
    rows = _rows_last(scores)
    n_rows, n_in = rows.shape
    full = (n_in // m) * m
    bits = np.ones((n_rows, n_in), dtype=bool)
    if n > 0 and full > 0:
        grouped = rows[:, :full].reshape(n_rows, full // m, m)
        order = np.argsort(grouped, axis=-1, kind="stable")
        drop = np.zeros_like(grouped, dtype=bool)
        np.put_along_axis(drop, order[..., :n], True, axis=-1)
        bits[:, :full] = ~drop.reshape(n_rows, full)
    group_ids = nm_group_ids(tensor.shape, m)
    sizes = np.bincount(group_ids.reshape(-1))
    per_row = -(-n_in // m)
    capacity = sizes.copy()
    full_groups = np.tile(np.arange(per_row) < n_in // m, n_rows)
    capacity[full_groups] = m - n
    return Mask(
        name=name,
        granularity=Granularity.N_OF_M,
        bits=_restore(bits, tensor.shape).reshape(original_shape),
        n=n,
        m=m,
        group_ids=group_ids.reshape(original_shape),
        group_capacity=capacity,
    )
