"""Mini-batch SGD with momentum and a piecewise-constant learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .layers import ParamSet

DEFAULT_SCHEDULE = ((0, 1e-2), (1400, 1e-3), (2800, 1e-4))


class TrainingComplete(Exception):
    """Raised when a learning rate is requested at or past the stop iteration."""


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, what: str = "gradient"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    momentum: float = 0.9
    batch_size: int = 256
    base_lr: Optional[float] = None  # defaults to the first schedule rate
    hidden_lr_multiplier: float = 1e-2
    schedule: tuple = DEFAULT_SCHEDULE
    stop_iteration: int = 4200
    weight_decay: float = 0.0

    def __post_init__(self):
        sched = tuple((int(t), float(lr)) for t, lr in self.schedule)
        object.__setattr__(self, "schedule", sched)
        if not sched or sched[0][0] != 0:
            raise ValueError("schedule must start at iteration 0")
        thresholds = [t for t, _ in sched]
        rates = [lr for _, lr in sched]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("schedule thresholds must be strictly increasing")
        if any(lr <= 0 for lr in rates) or any(b > a for a, b in zip(rates, rates[1:])):
            raise ValueError("schedule rates must be positive and non-increasing")
        if self.base_lr is None:
            object.__setattr__(self, "base_lr", rates[0])
        elif self.base_lr != rates[0]:
            raise ValueError(f"base_lr {self.base_lr} disagrees with the schedule's first rate {rates[0]}")
        if self.stop_iteration <= thresholds[-1]:
            raise ValueError("stop_iteration must exceed the last schedule threshold")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.hidden_lr_multiplier < 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ValueError("multiplier and weight decay must be >= 0, momentum in [0,1)")

    def scaled(self, factor: float) -> "TrainConfig":
        """Shrink every iteration count by ``factor`` keeping the plateau ratios."""
        sched = tuple((int(round(t * factor)), lr) for t, lr in self.schedule)
        return replace(self, schedule=sched, stop_iteration=int(round(self.stop_iteration * factor)))


@dataclass
class OptimizerState:
    velocity: dict = field(default_factory=dict)
    iteration: int = 0

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "OptimizerState":
        return cls({k: (np.zeros_like(w), np.zeros_like(b)) for k, (w, b) in params.items()}, 0)


def lr_at(config: TrainConfig, iteration: int, lr_role: str = "head") -> float:
    if iteration >= config.stop_iteration:
        raise TrainingComplete(f"iteration {iteration} >= stop_iteration {config.stop_iteration}")
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    lr = config.schedule[0][1]
    for threshold, rate in config.schedule:
        if iteration >= threshold:
            lr = rate
    if lr_role == "hidden":
        return lr * config.hidden_lr_multiplier
    if lr_role != "head":
        raise ValueError(f"unknown lr_role {lr_role!r}")
    return lr


def sgd_step(params: ParamSet, grads: ParamSet, state: OptimizerState, config: TrainConfig,
             lr_roles: Mapping[str, str]) -> tuple[ParamSet, OptimizerState]:
    """One momentum update ``v <- mu*v - lr*(g + wd*theta); theta <- theta + v``.

    The learning rate is resolved per parameter from its role before the
    velocity update.  Inputs are not modified.
    """
    if set(grads) != set(params):
        raise ValueError("gradient keys do not match parameter keys")
    new_params, new_vel = {}, {}
    for name, pair in params.items():
        eta = lr_at(config, state.iteration, lr_roles[name])
        updated, vel = [], []
        for theta, g, v in zip(pair, grads[name], state.velocity[name]):
            if g.shape != theta.shape or v.shape != theta.shape:
                raise ValueError(f"shape mismatch for {name}: param {theta.shape}, grad {g.shape}")
            if not np.all(np.isfinite(g)):
                raise DivergenceError(state.iteration)
            dt = theta.dtype.type
            step = g + dt(config.weight_decay) * theta if config.weight_decay else g
            v_new = dt(config.momentum) * v - dt(eta) * step
            updated.append(theta + v_new)
            vel.append(v_new)
        new_params[name] = tuple(updated)
        new_vel[name] = tuple(vel)
    return new_params, OptimizerState(new_vel, state.iteration + 1)
