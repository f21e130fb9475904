"""
Stage manager for the IEE cycle: estimate, prune, improve, explore, grow
"""

import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, model_validator

from ..errors import ConfigError, StateError
from ..sparsity.distributions import round_half_up


class StageName(str, Enum):
    """Stages of an IEE run"""
    ESTIMATE = "estimate"
    PRUNE = "prune"
    IMPROVE = "improve"
    EXPLORE = "explore"
    GROW = "grow"
    POST_PERIOD = "post-period"


class UpdateBudget(BaseModel):
    """Per-step transfer budget, cosine-decayed from ``omega0`` to zero over ``T`` steps"""
    omega0: float = Field(ge=0.0)
    T: int = Field(ge=0)
    integral: bool = True

    @classmethod
    def from_psi(cls, psi: float, T: int, fraction: float = 0.3, integral: bool = True) -> "UpdateBudget":
        omega0 = fraction * psi
        return cls(omega0=round_half_up(omega0) if integral else omega0, T=T, integral=integral)


def budget_at(t: int, budget: UpdateBudget) -> float:
    """
    Update budget of step ``t``.

    ``omega0 * (1 + cos(pi * t / T)) / 2``, rounded half up to whole items
    when the budget is integral.

    Args:
        t: Step index in ``[0, T]``
        budget: Budget schedule

    Returns:
        Omega^t
    """
    if budget.T <= 0:
        raise StateError("update budget is undefined when T = 0")
    if not 0 <= t <= budget.T:
        raise StateError(f"step {t} outside [0, {budget.T}]")
    value = budget.omega0 * 0.5 * (1.0 + math.cos(math.pi * t / budget.T))
    return float(round_half_up(value)) if budget.integral else value


class IeeSchedule(BaseModel):
    """
    Cycle lengths and update-period bounds.

    ``T`` defaults to ``floor(stop_fraction * total_train_iters / (H + J + Q))``.
    """
    H: int = Field(default=150, ge=0)
    J: int = Field(default=150, ge=0)
    Q: int = Field(default=150, ge=0)
    total_train_iters: int = Field(default=1, ge=0)
    stop_fraction: float = Field(default=0.75, gt=0.0, le=1.0)
    T: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _resolve_steps(self):
        if self.delta_t <= 0:
            raise ConfigError("schedule: H + J + Q must be positive")
        limit = int(math.floor(self.stop_fraction * self.total_train_iters / self.delta_t + 1e-9))
        if self.T is None:
            self.T = limit
        elif self.T > limit:
            raise ConfigError(
                f"schedule: T={self.T} cycles of {self.delta_t} iterations exceed "
                f"{self.stop_fraction} of {self.total_train_iters} iterations (max T={limit})"
            )
        return self

    @property
    def delta_t(self) -> int:
        return self.H + self.J + self.Q

    @property
    def update_period_end(self) -> int:
        """Last iteration at which a mask can change."""
        return self.T * self.delta_t


class StageState(BaseModel):
    """Position of the run in the cycle"""
    stage: StageName = StageName.ESTIMATE
    t: int = 0
    i: int = 0
    flag: bool = False
    improving: bool = False


class IterationPlan(BaseModel):
    """What iteration ``i`` does: mask events first, then one training step in ``stage``"""
    iteration: int
    prune: bool = False
    begin_explore: bool = False
    grow: bool = False
    stage: StageName
    t: int


class StageManager:
    """
    Evaluates the cycle triggers for each iteration ``i = 1 .. N``.

    With ``dT = H + J + Q`` and ``t < T``: prune when ``(i + J + Q) % dT == 0``,
    set the exploration flag when ``(i + Q) % dT == 0``, grow (then
    ``t += 1`` and clear the flag) when ``i % dT == 0``. The three
    conditions are checked in that order and, when two coincide because a
    stage length is zero, both fire. The iteration then trains the
    exploration space when the flag is set and the active set otherwise.
    """

    def __init__(self, schedule: IeeSchedule, state: Optional[StageState] = None):
        self.schedule = schedule
        self.state = state or StageState()

    def advance(self) -> IterationPlan:
        """Move to the next iteration and return its plan."""
        sched = self.schedule
        state = self.state
        state.i += 1
        i, d = state.i, sched.delta_t
        plan = IterationPlan(iteration=i, stage=StageName.ESTIMATE, t=state.t)
        if state.t < sched.T and (i + sched.J + sched.Q) % d == 0:
            plan.prune = True
            state.improving = True
        if state.t < sched.T and (i + sched.Q) % d == 0:
            plan.begin_explore = True
            state.flag = True
            state.improving = False
        if state.t < sched.T and i % d == 0:
            plan.grow = True
            state.t += 1
            state.flag = False
            state.improving = False
        if state.flag:
            plan.stage = StageName.EXPLORE
        elif state.t >= sched.T:
            plan.stage = StageName.POST_PERIOD
        elif state.improving:
            plan.stage = StageName.IMPROVE
        else:
            plan.stage = StageName.ESTIMATE
        plan.t = state.t
        state.stage = plan.stage
        return plan


def stage_trace(schedule: IeeSchedule, iterations: Optional[int] = None) -> List[IterationPlan]:
    """Plans of every iteration of a run (no training)."""
    manager = StageManager(schedule)
    count = schedule.total_train_iters if iterations is None else iterations
    return [manager.advance() for _ in range(count)]
