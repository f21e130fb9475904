"""
Importance criteria: weight magnitude, BatchNorm Taylor channel score, dense-gradient growth score
"""

from enum import Enum
from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..errors import ConfigError, UnsupportedScopeError
from ..nn.model import Model
from ..sparsity.masks import Granularity, ParamPartition


class ReportScope(str, Enum):
    """Items a report scores"""
    WEIGHTS = "weights"
    CHANNELS = "channels"


class ImportanceReport(BaseModel):
    """Per-item saliency aligned with the partition's mask bits"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    scope: ReportScope
    criterion: str
    values: Dict[str, np.ndarray]
    accumulation_steps: int = 0

    def flat(self) -> np.ndarray:
        return np.concatenate([v.reshape(-1) for v in self.values.values()]) if self.values else np.zeros(0)


def magnitude_score(model: Model, partition: ParamPartition) -> ImportanceReport:
    """
    ``|theta|`` for every partitioned weight, read from stored values.

    Exploration-space entries are scored at their stored (most recently
    used or explored) value, never at zero. A channel partition scores each
    channel by the mean ``|theta|`` of its weight slice.
    """
    params = model.named_parameters()
    values: Dict[str, np.ndarray] = {}
    for name in partition.names():
        magnitude = np.abs(params[name].data).astype(np.float64)
        if partition.granularity == Granularity.CHANNEL:
            magnitude = magnitude.reshape(magnitude.shape[0], -1).mean(axis=1)
        values[name] = magnitude
    return ImportanceReport(scope=ReportScope.WEIGHTS, criterion="magnitude", values=values)


def taylor_channel_terms(model: Model, partition: ParamPartition) -> Dict[str, np.ndarray]:
    """``|g_gamma * gamma + g_beta * beta|`` per channel from the current gradients."""
    params = model.named_parameters()
    terms: Dict[str, np.ndarray] = {}
    for name in partition.names():
        group = partition.groups.get(name)
        if group is None or group.gamma is None:
            raise ConfigError(
                f"taylor importance needs a batchnorm after layer {name.split('.')[0]} ('{name}')"
            )
        gamma, beta = params[group.gamma], params[group.beta]
        g_gamma = gamma.grad if gamma.grad is not None else np.zeros_like(gamma.data)
        g_beta = beta.grad if beta.grad is not None else np.zeros_like(beta.data)
        terms[name] = np.abs(
            g_gamma.astype(np.float64) * gamma.data + g_beta.astype(np.float64) * beta.data
        )
    return terms


class ImportanceCriterion:
    """
    A criterion scores items over an estimation window.

    ``begin_window`` starts a window, ``observe`` is called after every
    backward pass inside it, and ``report`` emits the window's scores.
    """

    name = "criterion"
    scope = ReportScope.WEIGHTS

    def __init__(self):
        self.steps = 0

    def begin_window(self):
        self.steps = 0

    def observe(self, model: Model, partition: ParamPartition):
        self.steps += 1

    def report(self, model: Model, partition: ParamPartition) -> ImportanceReport:
        raise NotImplementedError

    def state(self) -> Dict[str, np.ndarray]:
        return {}

    def load_state(self, state: Dict[str, np.ndarray], steps: int):
        self.steps = steps


class MagnitudeCriterion(ImportanceCriterion):
    name = "magnitude"
    scope = ReportScope.WEIGHTS

    def report(self, model: Model, partition: ParamPartition) -> ImportanceReport:
        report = magnitude_score(model, partition)
        report.accumulation_steps = self.steps
        return report


class TaylorCriterion(ImportanceCriterion):
    """Running mean of per-batch ``|g_gamma*gamma + g_beta*beta|`` over the window."""

    name = "taylor"
    scope = ReportScope.CHANNELS

    def __init__(self):
        super().__init__()
        self._sums: Dict[str, np.ndarray] = {}

    def begin_window(self):
        super().begin_window()
        self._sums = {}

    def observe(self, model: Model, partition: ParamPartition):
        for name, term in taylor_channel_terms(model, partition).items():
            self._sums[name] = self._sums.get(name, 0.0) + term
        self.steps += 1

    def report(self, model: Model, partition: ParamPartition) -> ImportanceReport:
        if self.steps == 0:
            values = taylor_channel_terms(model, partition)
        else:
            values = {name: total / self.steps for name, total in self._sums.items()}
        return ImportanceReport(
            scope=ReportScope.CHANNELS,
            criterion=self.name,
            values=values,
            accumulation_steps=self.steps,
        )

    def state(self) -> Dict[str, np.ndarray]:
        return {name: np.asarray(total, dtype=np.float64) for name, total in self._sums.items()}

    def load_state(self, state: Dict[str, np.ndarray], steps: int):
        self._sums = {name: np.array(v, dtype=np.float64) for name, v in state.items()}
        self.steps = steps


def build_criterion(name: str) -> ImportanceCriterion:
    if name == "magnitude":
        return MagnitudeCriterion()
    if name == "taylor":
        return TaylorCriterion()
    raise ConfigError(f"importance: unknown criterion '{name}' (expected 'magnitude' or 'taylor')")


def rigl_grow_score(model: Model, partition: ParamPartition, inputs, targets) -> ImportanceReport:
    """
    ``|dL/dtheta|`` with exploration-space weights held at zero in the forward pass.

    One mini-batch; parameter values and batchnorm running statistics are
    left as they were.

    Args:
        model: Model to probe
        partition: Active / exploration split (weight granularity only)
        inputs: Mini-batch inputs
        targets: Mini-batch targets

    Returns:
        Dense-gradient magnitudes for every partitioned weight
    """
    if partition.granularity == Granularity.CHANNEL:
        raise UnsupportedScopeError(
            "dense-gradient growth is undefined for channels: zeroed channels receive zero gradient"
        )
    buffers = [(layer, {k: v.copy() for k, v in layer.buffers.items()}) for layer in model.layers]
    saved_grads = {name: t.grad for name, t in model.named_parameters().items()}
    model.zero_grad()
    out = model.forward(inputs, training=True, masks=partition.forward_masks(model), dense_grad=True)
    loss = model.compute_loss(out, targets)
    model.backward(loss)
    values: Dict[str, np.ndarray] = {}
    for name in partition.names():
        grad: Optional[np.ndarray] = model.dense_grads.get(name)
        shape = partition.masks[name].bits.shape
        values[name] = np.zeros(shape) if grad is None else np.abs(np.asarray(grad, dtype=np.float64))
    for layer, saved in buffers:
        layer.buffers.update(saved)
    for name, tensor in model.named_parameters().items():
        tensor.grad = saved_grads[name]
    return ImportanceReport(scope=ReportScope.WEIGHTS, criterion="rigl-gradient", values=values, accumulation_steps=1)
