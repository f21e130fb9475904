"""
Masks and the active / exploration partition of prunable parameters
"""

from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..errors import InvalidPlanError, StateError
from ..nn.model import ChannelGroup, Model


class Granularity(str, Enum):
    """What one mask bit covers"""
    WEIGHT = "weight"
    CHANNEL = "channel"
    N_OF_M = "n-of-m"


class Mask(BaseModel):
    """
    Bit array over one prunable tensor (weights) or one layer's channels.

    For ``n-of-m`` granularity ``group_ids`` assigns each entry to its
    contiguous input-dimension group and ``group_capacity`` holds how many
    entries of each group may be active.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    granularity: Granularity
    bits: np.ndarray
    n: int = 0
    m: int = 0
    group_ids: Optional[np.ndarray] = None
    group_capacity: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return int(self.bits.size)

    @property
    def active(self) -> int:
        return int(self.bits.sum())

    def copy(self) -> "Mask":
        return self.model_copy(update={"bits": self.bits.copy()})


class ParamPartition:
    """
    Disjoint split of prunable items into the active set and the exploration space.

    An item is active when its mask bit is 1 and in the exploration space
    when it is 0, so the two sets cover every item and never overlap.
    """

    def __init__(self, masks: Dict[str, Mask], groups: Optional[Dict[str, ChannelGroup]] = None):
        self.masks = masks
        self.groups = groups or {}

    @property
    def granularity(self) -> Granularity:
        first = next(iter(self.masks.values()), None)
        return first.granularity if first else Granularity.WEIGHT

    @property
    def active_count(self) -> int:
        return sum(mask.active for mask in self.masks.values())

    @property
    def total_count(self) -> int:
        return sum(mask.size for mask in self.masks.values())

    @property
    def explore_count(self) -> int:
        return self.total_count - self.active_count

    def names(self) -> List[str]:
        return list(self.masks)

    def copy(self) -> "ParamPartition":
        return ParamPartition({k: m.copy() for k, m in self.masks.items()}, dict(self.groups))

    def flat_bits(self) -> np.ndarray:
        """All mask bits concatenated in layer order."""
        if not self.masks:
            return np.zeros(0, dtype=bool)
        return np.concatenate([m.bits.reshape(-1).astype(bool) for m in self.masks.values()])

    def load_flat_bits(self, flat: np.ndarray):
        offset = 0
        for mask in self.masks.values():
            mask.bits = flat[offset:offset + mask.size].reshape(mask.bits.shape).astype(bool)
            offset += mask.size
        if offset != flat.size:
            raise InvalidPlanError(f"bitset of {flat.size} entries does not match partition of {offset}")

    def _expand(self, model: Model, bits_by_name: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        params = model.named_parameters()
        out: Dict[str, np.ndarray] = {}
        for name, bits in bits_by_name.items():
            if self.granularity != Granularity.CHANNEL:
                out[name] = bits.astype(np.float32)
                continue
            group = self.groups[name]
            shape = params[group.weight].shape
            out[group.weight] = np.broadcast_to(
                bits.reshape((-1,) + (1,) * (len(shape) - 1)), shape
            ).astype(np.float32)
            for extra in (group.bias, group.gamma, group.beta):
                if extra is not None:
                    out[extra] = bits.astype(np.float32)
        return out

    def forward_masks(self, model: Model) -> Dict[str, np.ndarray]:
        """Multiplicative masks for the forward pass (active set only)."""
        return self._expand(model, {k: m.bits for k, m in self.masks.items()})

    def active_update_masks(self, model: Model) -> Dict[str, np.ndarray]:
        """Optimizer masks that let only the active set (and non-prunable tensors) move."""
        return self.forward_masks(model)

    def explore_update_masks(self, model: Model, include_active: bool = False) -> Dict[str, np.ndarray]:
        """
        Optimizer masks for Reactivate & Explore.

        Only exploration-space entries move; every tensor outside the
        partition is frozen. With ``include_active`` the active set trains too.
        """
        if include_active:
            explore = {k: np.ones_like(m.bits, dtype=bool) for k, m in self.masks.items()}
        else:
            explore = {k: ~m.bits.astype(bool) for k, m in self.masks.items()}
        masks = self._expand(model, explore)
        for name, param in model.named_parameters().items():
            if name not in masks:
                masks[name] = np.full(param.shape, 1.0 if include_active else 0.0, dtype=np.float32)
        return masks

    def per_layer_active(self) -> Dict[str, int]:
        return {k: m.active for k, m in self.masks.items()}

    def check(self):
        """Raise if any mask has the wrong size, a non-binary entry, or an overfull N:M group."""
        for name, mask in self.masks.items():
            values = np.unique(mask.bits)
            if not set(values.tolist()) <= {0, 1, False, True}:
                raise InvalidPlanError(f"mask '{name}' holds non-binary values")
            if mask.granularity == Granularity.CHANNEL and name in self.groups:
                if mask.size != self.groups[name].channels:
                    raise InvalidPlanError(f"channel mask '{name}' has {mask.size} bits for {self.groups[name].channels} channels")
            if mask.granularity == Granularity.N_OF_M and mask.group_capacity is not None:
                used = np.bincount(
                    mask.group_ids[mask.bits.astype(bool)].reshape(-1), minlength=mask.group_capacity.size
                )
                if np.any(used > mask.group_capacity):
                    raise InvalidPlanError(f"mask '{name}' keeps more than {mask.m - mask.n} of {mask.m} in a group")

    def load_masks(self, stored: Dict[str, np.ndarray], source: str = "checkpoint"):
        """
        Replace every mask's bits with ``stored["mask/<name>"]`` and validate the result.

        Raises:
            StateError: a mask is missing or has the wrong number of bits
            InvalidPlanError: the loaded bits violate the partition's constraints
        """
        for name, mask in self.masks.items():
            key = f"mask/{name}"
            if key not in stored:
                raise StateError(f"{source}: no mask for '{name}'")
            bits = np.asarray(stored[key])
            if bits.size != mask.size:
                raise StateError(f"{source}: mask '{name}' has {bits.size} bits, expected {mask.size}")
            mask.bits = bits.reshape(mask.bits.shape)
        self.check()
        for mask in self.masks.values():
            mask.bits = mask.bits.astype(bool)
