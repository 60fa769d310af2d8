"""SGD with momentum, Adam, and a cosine-decay-with-restarts schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import ParamSet
from .tensor import ContractError, NumericError


@dataclass
class CosineRestarts:
    """Cosine decay that restarts after each period; period ``i`` lasts
    ``first_decay_steps * t_mul**i`` steps and peaks at ``base_lr * m_mul**i``."""

    base_lr: float
    first_decay_steps: int
    t_mul: float = 2.0
    m_mul: float = 1.0
    alpha: float = 0.0

    def __call__(self, step: int) -> float:
        period = float(self.first_decay_steps)
        start = 0.0
        peak = self.base_lr
        while step >= start + period:
            start += period
            period *= self.t_mul
            peak *= self.m_mul
        frac = (step - start) / period
        cosine = 0.5 * (1.0 + math.cos(math.pi * frac))
        return peak * ((1.0 - self.alpha) * cosine + self.alpha)


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: CosineRestarts | None = None
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ContractError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ContractError(f"learning rate must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ContractError(f"momentum must be in [0, 1), got {self.momentum}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ContractError("adam betas must be in [0, 1) and eps > 0")

    def current_lr(self, step: int) -> float:
        return self.schedule(step) if self.schedule is not None else self.lr


def opt_step(state: OptimizerState, params: ParamSet, names=None) -> None:
    """One update of every parameter (or only ``names``) from its ``.grad``."""
    lr = state.current_lr(params.step)
    t = params.step + 1
    for name in (params.names() if names is None else names):
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        slot = state.slots.setdefault(name, {})
        if state.kind == "sgd":
            v = slot.get("v")
            v = g.copy() if v is None else state.momentum * v + g
            slot["v"] = v
            p.data = p.data - lr * v
        else:
            m = slot.get("m", np.zeros_like(g))
            s = slot.get("s", np.zeros_like(g))
            m = state.beta1 * m + (1.0 - state.beta1) * g
            s = state.beta2 * s + (1.0 - state.beta2) * g * g
            slot["m"], slot["s"] = m, s
            m_hat = m / (1.0 - state.beta1 ** t)
            s_hat = s / (1.0 - state.beta2 ** t)
            p.data = p.data - lr * m_hat / (np.sqrt(s_hat) + state.eps)
    params.step = t
