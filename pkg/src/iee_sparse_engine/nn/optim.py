"""
SGD with momentum, weight decay, and a warmup + cosine learning-rate schedule
"""

import math
from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel, Field

from .model import Model
from ..errors import ShapeError


class LRSchedule(BaseModel):
    """Linear warmup over ``warmup_fraction`` of the iterations, then cosine decay to ``min_lr``"""
    base_lr: float = 0.1
    total_iters: int = 1
    warmup_fraction: float = 0.05
    min_lr: float = 0.0

    def lr_at(self, step: int) -> float:
        warmup = int(round(self.warmup_fraction * self.total_iters))
        if warmup > 0 and step < warmup:
            return self.base_lr * (step + 1) / warmup
        span = max(self.total_iters - warmup, 1)
        progress = min(max(step - warmup, 0) / span, 1.0)
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * progress))


class Optimizer:
    """
    Momentum SGD state: schedule, coefficients, per-parameter velocity buffers.

    Velocity follows ``v <- momentum * v + g``; the update is ``p <- p - lr * v``.
    """

    def __init__(
        self,
        schedule: Optional[LRSchedule] = None,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        constant_lr: Optional[float] = None,
    ):
        self.schedule = schedule or LRSchedule()
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.constant_lr = constant_lr
        self.velocity: Dict[str, np.ndarray] = {}
        self.step_count = 0

    @property
    def lr(self) -> float:
        if self.constant_lr is not None:
            return self.constant_lr
        return self.schedule.lr_at(self.step_count)

    def reset_velocity(self, name: str, keep: Optional[np.ndarray] = None):
        """Zero the velocity of ``name`` where ``keep`` is 0 (everywhere when None)."""
        if name not in self.velocity:
            return
        if keep is None:
            self.velocity[name][...] = 0.0
        else:
            self.velocity[name] *= keep.astype(np.float32)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: v.copy() for name, v in self.velocity.items()}

    def load_state_dict(self, velocity: Dict[str, np.ndarray], step_count: int):
        self.velocity = {name: np.array(v, dtype=np.float32) for name, v in velocity.items()}
        self.step_count = step_count


def sgd_step(
    model: Model,
    optimizer: Optimizer,
    update_masks: Optional[Dict[str, np.ndarray]] = None,
):
    """
    Apply one momentum-SGD update.

    Only entries whose update-mask bit is 1 change; their velocities are
    kept, all others have velocity zeroed and value untouched. Frozen
    tensors (``requires_grad=False``) and tensors without a grad are skipped.
    A mask of all zeros freezes the whole tensor.

    Args:
        model: Model whose parameters carry gradients
        optimizer: Optimizer state, advanced by one step
        update_masks: Optional per-parameter 0/1 arrays keyed by qualified name
    """
    lr = optimizer.lr
    for name, param in model.named_parameters().items():
        if not param.requires_grad or param.grad is None:
            continue
        grad = param.grad
        if optimizer.weight_decay and name.endswith(".weight"):
            grad = grad + optimizer.weight_decay * param.data
        velocity = optimizer.velocity.get(name)
        if velocity is None:
            velocity = np.zeros_like(param.data)
        velocity = optimizer.momentum * velocity + grad
        mask = update_masks.get(name) if update_masks else None
        if mask is not None:
            if mask.shape != param.shape:
                raise ShapeError(f"update mask for '{name}' has shape {mask.shape}, expected {param.shape}")
            velocity = velocity * mask.astype(np.float32)
            param.data = np.where(mask.astype(bool), param.data - lr * velocity, param.data).astype(np.float32)
        else:
            param.data = (param.data - lr * velocity).astype(np.float32)
        optimizer.velocity[name] = velocity.astype(np.float32)
    optimizer.step_count += 1
