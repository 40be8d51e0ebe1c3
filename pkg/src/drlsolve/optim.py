"""Adam with staircase-decayed, floored schedules."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, iteration: int, index: int, value: float):
        super().__init__(f"non-finite gradient component {index} ({value}) at step {iteration}")
        self.iteration = iteration
        self.index = index
        self.value = value


@dataclass(frozen=True)
class DecaySchedule:
    initial: float
    rate: float = 1.0
    interval: int = 1
    floor: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.rate <= 1.0:
            raise ValueError(f"decay rate must lie in (0, 1], got {self.rate}")
        if self.floor > self.initial:
            raise ValueError("schedule floor exceeds its initial value")
        if self.interval < 1:
            raise ValueError("decay interval must be >= 1")

    def __call__(self, iteration: int) -> float:
        return value_at(self, iteration)


def value_at(schedule: DecaySchedule, iteration: int) -> float:
    """``max(floor, initial * rate ** (iteration // interval))``."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    if iteration == float("inf"):
        return schedule.floor
    k = int(iteration) // schedule.interval
    return max(schedule.floor, schedule.initial * schedule.rate ** k)


def constant(value: float) -> DecaySchedule:
    return DecaySchedule(value, 1.0, 1, value)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.beta1, self.beta2,
                         self.eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns new params and a new state."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NonFiniteGradientError(state.step, int(bad[0]), float(grads[bad[0]]))
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    m = b1 * state.m + (1.0 - b1) * grads
    v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, b1, b2, state.eps)


@dataclass
class Optimizer:
    """Adam driven by a learning-rate schedule on a global iteration counter."""

    schedule: DecaySchedule
    state: AdamState = field(default=None)
    iteration: int = 0

    def step(self, params, grads):
        if self.state is None:
            self.state = AdamState.fresh(np.size(params))
        lr = value_at(self.schedule, self.iteration)
        params, self.state = adam_step(params, grads, self.state, lr)
        self.iteration += 1
        return params, lr
