"""SGD and Adam with a step-decay learning-rate schedule.

The schedule counts *epochs*: training loops call :meth:`end_epoch` after
each full pass and the learning rate is multiplied by ``factor`` every
``period`` epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError
from .graph import Parameter


@dataclass
class StepSchedule:
    factor: float = 1.0
    period: int = 0  # 0 disables decay

    def lr_at(self, base_lr: float, epoch: int) -> float:
        if self.period <= 0:
            return base_lr
        return base_lr * self.factor ** (epoch // self.period)


def _check_finite(params: list[Parameter]) -> None:
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            bad = int(np.count_nonzero(~np.isfinite(p.grad)))
            raise NumericalError(f"non-finite gradient in parameter {p.key}: {bad} of {p.grad.size} entries")


class Optimizer:
    kind = "base"

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 schedule: StepSchedule | None = None) -> None:
        self.base_lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.schedule = schedule or StepSchedule()
        self.epoch = 0
        self.steps = 0

    @property
    def lr(self) -> float:
        return self.schedule.lr_at(self.base_lr, self.epoch)

    def end_epoch(self) -> None:
        self.epoch += 1

    def step(self, params: list[Parameter]) -> None:
        _check_finite(params)
        for p in params:
            self._update(p)
        self.steps += 1

    def _update(self, p: Parameter) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """theta <- theta - lr * (g + wd * theta), optionally with heavy-ball momentum."""

    kind = "sgd"

    def __init__(self, lr: float, weight_decay: float = 0.0, momentum: float = 0.0,
                 schedule: StepSchedule | None = None) -> None:
        super().__init__(lr, weight_decay, schedule)
        self.momentum = float(momentum)
        self.velocity: dict[str, np.ndarray] = {}

    def _update(self, p):
        g = p.grad + self.weight_decay * p.value if self.weight_decay else p.grad
        if self.momentum:
            v = self.velocity.get(p.key)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[p.key] = v
            g = v
        p.value -= (self.lr * g).astype(p.value.dtype, copy=False)


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, lr: float, weight_decay: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 schedule: StepSchedule | None = None) -> None:
        super().__init__(lr, weight_decay, schedule)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params):
        self.t = self.steps + 1
        super().step(params)

    def _update(self, p):
        g = p.grad + self.weight_decay * p.value if self.weight_decay else p.grad
        m = self.m.get(p.key)
        v = self.v.get(p.key)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = self.beta1 * m + (1 - self.beta1) * g
        v = self.beta2 * v + (1 - self.beta2) * g * g
        self.m[p.key], self.v[p.key] = m, v
        m_hat = m / (1 - self.beta1 ** self.t)
        v_hat = v / (1 - self.beta2 ** self.t)
        p.value -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.value.dtype, copy=False)


def make_optimizer(kind: str, lr: float, weight_decay: float = 0.0, momentum: float = 0.0,
                   factor: float = 1.0, period: int = 0) -> Optimizer:
    schedule = StepSchedule(factor, period)
    if kind == "sgd":
        return SGD(lr, weight_decay, momentum, schedule)
    if kind == "adam":
        return Adam(lr, weight_decay, schedule=schedule)
    raise ValueError(f"unknown optimizer {kind!r}")
