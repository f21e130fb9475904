"""
Training-cost ledger in units of single-sample forward FLOPs, plus closed-form references
"""

import math
import threading
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from ..errors import UnknownStageError
from ..nn.layers import LayerKind
from ..nn.model import Model

BACKWARD_MULTIPLIER = 2


class CostStage(str, Enum):
    """Stages the ledger has a per-sample rate for"""
    ESTIMATE = "estimate"
    PRUNE = "prune"
    IMPROVE = "improve"
    EXPLORE = "explore"
    GROW = "grow"
    POST_PERIOD = "post-period"
    DENSE = "dense"
    DENSE_GRAD = "dense-grad"


def forward_flops(model: Model, masks: Optional[Dict[str, np.ndarray]] = None) -> int:
    """
    Per-sample forward FLOPs of the dense/conv layers, one multiply plus one add = 2.

    A dense layer counts 2 per effective weight; a conv layer counts 2 per
    effective weight per output position. A weight is effective when its
    own mask bit is set and its input channel is alive upstream; channels
    die only through channel masks (bias or batchnorm bits), so a channel
    mask shrinks both the pruned layer and the one after it.

    Args:
        model: Model to count
        masks: Forward masks keyed by parameter name (``ParamPartition.forward_masks``)

    Returns:
        FLOPs for one sample
    """
    masks = masks or {}
    alive: Optional[np.ndarray] = None
    total = 0
    for index, layer in enumerate(model.layers):
        in_shape, out_shape = model.shapes[index]
        if layer.kind in (LayerKind.DENSE, LayerKind.CONV2D):
            weight = layer.params["weight"]
            mask = masks.get(weight.name)
            effective = np.ones(weight.shape, dtype=bool) if mask is None else mask.astype(bool)
            if alive is not None:
                reshape = (1, -1) + (1,) * (weight.data.ndim - 2)
                effective = effective & alive.reshape(reshape)
            positions = int(np.prod(out_shape[1:])) if layer.kind == LayerKind.CONV2D else 1
            total += 2 * int(effective.sum()) * positions
            bias = layer.params.get("bias")
            bias_mask = masks.get(bias.name) if bias is not None else None
            alive = None if bias_mask is None else bias_mask.astype(bool)
        elif layer.kind == LayerKind.BATCHNORM:
            gamma = masks.get(layer.params["gamma"].name)
            if gamma is not None:
                alive = gamma.astype(bool) if alive is None else alive & gamma.astype(bool)
        elif layer.kind == LayerKind.FLATTEN and alive is not None:
            spatial = int(np.prod(in_shape[1:]))
            alive = np.repeat(alive, spatial)
    return total


class LedgerSnapshot(BaseModel):
    """Cumulative totals at one point of a run"""
    cumulative: float = 0.0
    samples: int = 0
    subtotals: Dict[str, float] = Field(default_factory=dict)
    stage_samples: Dict[str, int] = Field(default_factory=dict)

    @property
    def per_sample(self) -> float:
        return self.cumulative / self.samples if self.samples else 0.0


class FlopsLedger:
    """
    Running train-cost counter.

    ``zeta_p`` must be refreshed through ``set_sparse`` after every mask
    change; ``charge`` adds ``samples * rate(stage)``.
    """

    def __init__(self, zeta_d: float, zeta_p: Optional[float] = None):
        self.zeta_d = float(zeta_d)
        self.zeta_p = float(zeta_d if zeta_p is None else zeta_p)
        self.cumulative = 0.0
        self.samples = 0
        self.subtotals: Dict[str, float] = {stage.value: 0.0 for stage in CostStage}
        self.stage_samples: Dict[str, int] = {stage.value: 0 for stage in CostStage}
        self.zeta_p_history: List[float] = [self.zeta_p]
        self._lock = threading.Lock()

    def set_sparse(self, zeta_p: float):
        self.zeta_p = float(zeta_p)
        self.zeta_p_history.append(self.zeta_p)

    def rate(self, stage) -> float:
        """Per-sample cost of a stage at the current ``zeta_p``."""
        try:
            stage = CostStage(stage)
        except ValueError:
            raise UnknownStageError(f"no FLOPs rate for stage '{stage}'")
        zp, zd = self.zeta_p, self.zeta_d
        if stage in (CostStage.ESTIMATE, CostStage.IMPROVE, CostStage.POST_PERIOD):
            return (1 + BACKWARD_MULTIPLIER) * zp
        if stage in (CostStage.EXPLORE, CostStage.DENSE_GRAD):
            # sparse forward and input-gradient pass plus one dense weight-gradient pass
            return BACKWARD_MULTIPLIER * zp + zd
        if stage == CostStage.DENSE:
            return (1 + BACKWARD_MULTIPLIER) * zd
        return 0.0

    def charge(self, stage, samples: int) -> float:
        """
        Add ``samples * rate(stage)``.

        Args:
            stage: CostStage or its value
            samples: Samples processed in the stage

        Returns:
            The amount charged
        """
        amount = samples * self.rate(stage)
        key = CostStage(stage).value
        with self._lock:
            self.cumulative += amount
            self.samples += samples
            self.subtotals[key] += amount
            self.stage_samples[key] += samples
        return amount

    def snapshot(self) -> LedgerSnapshot:
        return LedgerSnapshot(
            cumulative=self.cumulative,
            samples=self.samples,
            subtotals=dict(self.subtotals),
            stage_samples=dict(self.stage_samples),
        )

    def restore(self, snapshot: LedgerSnapshot):
        self.cumulative = snapshot.cumulative
        self.samples = snapshot.samples
        self.subtotals = dict(snapshot.subtotals)
        self.stage_samples = dict(snapshot.stage_samples)

    def mean_zeta_p(self) -> float:
        return float(np.mean(self.zeta_p_history))


def closed_form_iee(
    zeta_p: float,
    zeta_d: float,
    H: int,
    J: int,
    Q: int,
    stop_fraction: float = 0.75,
) -> float:
    """
    Average per-sample training cost of IEE.

    The update period (``stop_fraction`` of training) runs estimate and
    improve at ``3 zeta_p`` and explore at ``2 zeta_p + zeta_d``; the rest
    trains the sparse model at ``3 zeta_p``. With H = J = Q and the default
    stop fraction this is ``(11 zeta_p + zeta_d) / 4``.
    """
    period = H + J + Q
    cycle = ((H + J) * 3 * zeta_p + Q * (2 * zeta_p + zeta_d)) / period
    return stop_fraction * cycle + (1.0 - stop_fraction) * 3 * zeta_p


class ReferenceMethod(str, Enum):
    """Methods with a closed-form training cost"""
    IEE = "iee"
    IEE_STRUCTURED = "iee-structured"
    RIGL = "rigl"
    SET = "set"
    STATIC = "static"
    DENSE = "dense"
    SNFS = "snfs"
    PRUNING_FROM_PRETRAINED = "pruning-from-pretrained"
    GRADUAL = "gradual"
    DCIL = "dcil"
    INTERSPACE = "interspace"
    NAS = "nas"


def closed_form_reference(method, zeta_p: float, zeta_d: float, **params) -> float:
    """
    Closed-form average per-sample training cost of a named method.

    Args:
        method: ReferenceMethod or its value
        zeta_p: Sparse forward FLOPs per sample
        zeta_d: Dense forward FLOPs per sample
        **params: Method parameters. ``rigl``: ``delta_t``. ``iee``: ``H``,
            ``J``, ``Q``, ``stop_fraction``. ``iee-structured``: ``H``, ``J``,
            ``Q``, ``stop_epoch``, ``total_epochs``.
            ``pruning-from-pretrained``: ``pretrain_fraction``.
            ``gradual``: ``ramp_fraction`` (density ramps linearly from dense).

    Returns:
        Cost per sample in FLOPs
    """
    try:
        method = ReferenceMethod(method)
    except ValueError:
        raise UnknownStageError(f"no closed form for method '{method}'")
    if method == ReferenceMethod.IEE:
        return closed_form_iee(
            zeta_p, zeta_d, params.get("H", 150), params.get("J", 150), params.get("Q", 150),
            params.get("stop_fraction", 0.75),
        )
    if method == ReferenceMethod.IEE_STRUCTURED:
        fraction = params.get("stop_epoch", 5) / params.get("total_epochs", 130)
        return closed_form_iee(
            zeta_p, zeta_d, params.get("H", 150), params.get("J", 150), params.get("Q", 150), fraction,
        )
    if method == ReferenceMethod.RIGL:
        delta_t = params.get("delta_t", 100)
        return (delta_t * 3 * zeta_p + 2 * zeta_p + zeta_d) / (delta_t + 1)
    if method in (ReferenceMethod.STATIC, ReferenceMethod.SET, ReferenceMethod.NAS):
        return 3 * zeta_p
    if method == ReferenceMethod.DENSE:
        return 3 * zeta_d
    if method == ReferenceMethod.SNFS:
        return 2 * zeta_p + zeta_d
    if method == ReferenceMethod.DCIL:
        return 5 * zeta_d + zeta_p
    if method == ReferenceMethod.INTERSPACE:
        return 3 * zeta_p + 0.21 * zeta_d
    if method == ReferenceMethod.PRUNING_FROM_PRETRAINED:
        share = params.get("pretrain_fraction", 0.5)
        return share * 3 * zeta_d + (1.0 - share) * 3 * zeta_p
    ramp = params.get("ramp_fraction", 0.5)
    # linear density ramp from dense to sparse over the ramp, sparse afterwards
    return ramp * 3 * (zeta_d + zeta_p) / 2 + (1.0 - ramp) * 3 * zeta_p


def closed_form_table(zeta_p: float, zeta_d: float, **params) -> Dict[str, float]:
    """Every closed form at one (zeta_p, zeta_d), keyed by method name."""
    return {m.value: closed_form_reference(m, zeta_p, zeta_d, **params) for m in ReferenceMethod}


def dense_equivalent(cost: float, zeta_d: float) -> float:
    """Cost as a fraction of dense training (``3 zeta_d`` per sample)."""
    return cost / (3 * zeta_d) if zeta_d > 0 and math.isfinite(cost) else float("nan")
