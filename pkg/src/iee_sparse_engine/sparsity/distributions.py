"""
Layerwise sparsity distributions (Uniform, ERK, Non-Uniform, N:M) and partition initialization
"""

import math
from enum import Enum
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .masks import Granularity, Mask, ParamPartition
from .nm import apply_nm_mask
from ..errors import InfeasibleBudgetError, InvalidPlanError
from ..nn.model import Model


class PlanMode(str, Enum):
    """Layerwise distribution of the global sparsity"""
    UNIFORM = "uniform"
    ERK = "erk"
    NON_UNIFORM = "non-uniform"
    N_OF_M = "n-of-m"


class PlanScope(str, Enum):
    """Item unit the plan sparsifies"""
    WEIGHT = "weight"
    CHANNEL = "channel"


class SparsityPlan(BaseModel):
    """The ``plan`` section of an experiment"""
    model_config = ConfigDict(extra="forbid")

    mode: PlanMode = PlanMode.UNIFORM
    scope: PlanScope = PlanScope.WEIGHT
    sparsity: float = Field(default=0.9, ge=0.0, lt=1.0)
    n: int = 2
    m: int = 4
    non_uniform_init: Literal["uniform", "erk"] = "uniform"
    exempt_first_layer: bool = False

    def base_mode(self) -> PlanMode:
        """Distribution used for the initial masks."""
        if self.mode == PlanMode.NON_UNIFORM:
            return PlanMode(self.non_uniform_init)
        return self.mode


class PlanLayout(BaseModel):
    """Per-layer realization of a plan on a concrete model"""
    names: List[str]
    param_counts: List[int]
    densities: List[float]
    active_counts: List[int]
    psi: int

    @property
    def sparsities(self) -> List[float]:
        return [1.0 - d for d in self.densities]


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5 + 1e-9))


def erk_layer_densities(
    shapes: Sequence[Tuple[int, ...]],
    sparsity: float,
    dense_layers: Sequence[int] = (),
) -> List[float]:
    """
    Erdos-Renyi-Kernel densities hitting a global parameter-weighted density of ``1 - sparsity``.

    Raw scores are ``(n_in + n_out + kh + kw) / (n_in * n_out * kh * kw)``,
    with ``kh = kw = 1`` for dense layers; a shared scale is solved
    over the non-clipped layers, layers whose density would exceed 1 are
    clipped to dense and the scale re-solved until no layer exceeds 1.

    Args:
        shapes: Weight shapes, (out, in) or (out, in, kh, kw)
        sparsity: Global sparsity S in (0, 1)
        dense_layers: Indices forced dense before solving

    Returns:
        Density per layer
    """
    if not 0.0 < sparsity < 1.0:
        raise InvalidPlanError(f"ERK needs sparsity in (0, 1), got {sparsity}")
    counts = [int(np.prod(s)) for s in shapes]
    kernels = [tuple(s) if len(s) == 4 else (*s, 1, 1) for s in shapes]
    raw = [float(np.sum(k)) / float(np.prod(k)) for k in kernels]
    target = (1.0 - sparsity) * sum(counts)
    dense = set(dense_layers)
    while True:
        free = [i for i in range(len(shapes)) if i not in dense]
        if not free:
            raise InfeasibleBudgetError(
                f"ERK infeasible: every layer clipped to dense at sparsity {sparsity}"
            )
        rhs = target - sum(counts[i] for i in dense)
        if rhs <= 0:
            raise InfeasibleBudgetError(
                f"ERK infeasible: dense layers alone exceed the density budget at sparsity {sparsity}"
            )
        divisor = sum(raw[i] * counts[i] for i in free)
        scale = rhs / divisor
        over = [i for i in free if scale * raw[i] > 1.0]
        if not over:
            break
        top = max(raw[i] for i in over)
        dense.update(i for i in over if raw[i] == top)
    return [1.0 if i in dense else scale * raw[i] for i in range(len(shapes))]


def plan_layout(model: Model, plan: SparsityPlan) -> PlanLayout:
    """
    Resolve per-layer densities and active counts for the unstructured plan.

    Counts round half up; the difference to the global target
    ``round_half_up((1 - S) * total)`` is absorbed by the largest layer.
    """
    params = model.named_parameters()
    names = model.prunable_weights()
    if not names:
        raise InvalidPlanError("model has no prunable weights (only a classifier layer)")
    shapes = [params[n].shape for n in names]
    counts = [int(np.prod(s)) for s in shapes]
    mode = plan.base_mode()
    if mode == PlanMode.N_OF_M:
        densities = [(plan.m - plan.n) / plan.m] * len(names)
    elif plan.sparsity == 0.0:
        densities = [1.0] * len(names)
    elif mode == PlanMode.ERK:
        densities = erk_layer_densities(shapes, plan.sparsity, dense_layers=(0,) if plan.exempt_first_layer else ())
    else:
        densities = [1.0 - plan.sparsity] * len(names)
        if plan.exempt_first_layer and len(names) > 1:
            target = (1.0 - plan.sparsity) * sum(counts)
            rest = (target - counts[0]) / sum(counts[1:])
            if rest <= 0:
                raise InfeasibleBudgetError("first layer alone exceeds the density budget")
            densities = [1.0] + [rest] * (len(names) - 1)
    for name, density in zip(names, densities):
        if density <= 0.0:
            raise InvalidPlanError(f"layer '{name}' would have sparsity >= 1")
    active = [min(c, round_half_up(d * c)) for c, d in zip(counts, densities)]
    if mode == PlanMode.N_OF_M:
        return PlanLayout(names=names, param_counts=counts, densities=densities, active_counts=active, psi=sum(active))
    psi = round_half_up((1.0 - plan.sparsity) * sum(counts))
    largest = int(np.argmax(counts))
    active[largest] = int(np.clip(active[largest] + psi - sum(active), 1, counts[largest]))
    return PlanLayout(
        names=names,
        param_counts=counts,
        densities=densities,
        active_counts=active,
        psi=sum(active),
    )


def init_partition(model: Model, plan: SparsityPlan, rng: np.random.Generator) -> ParamPartition:
    """
    Random initial masks at each layer's planned density.

    Args:
        model: Model whose prunable tensors are partitioned
        plan: Sparsity plan (weight scope; channel scope keeps a uniform channel density)
        rng: Generator for the random selection

    Returns:
        ParamPartition whose active count equals the plan's budget
    """
    if plan.scope == PlanScope.CHANNEL:
        return init_channel_partition(model, 1.0 - plan.sparsity, rng)
    layout = plan_layout(model, plan)
    params = model.named_parameters()
    masks: Dict[str, Mask] = {}
    for name, count in zip(layout.names, layout.active_counts):
        shape = params[name].shape
        if plan.mode == PlanMode.N_OF_M:
            masks[name] = apply_nm_mask(
                params[name].data, plan.n, plan.m, importance=rng.random(shape), name=name,
            )
            continue
        flat = np.zeros(int(np.prod(shape)), dtype=bool)
        flat[rng.permutation(flat.size)[:count]] = True
        masks[name] = Mask(name=name, granularity=Granularity.WEIGHT, bits=flat.reshape(shape))
    return ParamPartition(masks)


def init_channel_partition(model: Model, density: float, rng: np.random.Generator) -> ParamPartition:
    """Random channel masks keeping ``round_half_up(density * channels)`` (at least one) per layer."""
    groups = {g.weight: g for g in model.channel_groups()}
    masks: Dict[str, Mask] = {}
    for name, group in groups.items():
        keep = max(1, min(group.channels, round_half_up(density * group.channels)))
        bits = np.zeros(group.channels, dtype=bool)
        bits[rng.permutation(group.channels)[:keep]] = True
        masks[name] = Mask(name=name, granularity=Granularity.CHANNEL, bits=bits)
    return ParamPartition(masks, groups)
