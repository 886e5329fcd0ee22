"""Adam with bias correction plus the two learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter first/second moments; step_count bumps once per update."""

    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    lr: float,
) -> AdamState:
    """One in-place Adam update of ``params`` from ``grads``.

    Moment buffers are lazily created on first sight of a parameter name.
    A NaN/Inf gradient aborts the whole step before any parameter moves.
    """
    if lr <= 0:
        raise ValueError("lr must be > 0")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter '{name}'")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for '{name}'")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return state


@dataclass
class LrSchedule:
    """inverse_sqrt: warmup ramp then start_lr * sqrt(warmup/step).

    linear_anneal: warmup ramp, then straight line from start_lr to end_lr,
    touching end_lr exactly at total_steps and holding there after.
    Steps are 1-based (the optimizer's step_count after the update).
    """

    kind: str = "linear_anneal"
    warmup_steps: int = 0
    start_lr: float = 3e-4
    end_lr: float = 1e-5
    total_steps: int = 10000

    def __post_init__(self):
        if self.kind not in ("inverse_sqrt", "linear_anneal"):
            raise ValueError(f"unknown schedule kind '{self.kind}'")
        if self.start_lr <= 0 or self.end_lr <= 0:
            raise ValueError("schedule endpoints must be positive")

    def lr(self, step: int) -> float:
        step = max(1, int(step))
        warm = max(1, self.warmup_steps)
        if self.kind == "inverse_sqrt":
            if step < warm:
                return self.start_lr * step / warm
            return self.start_lr * (warm / step) ** 0.5
        frac = min(step, self.total_steps) / self.total_steps
        base = self.start_lr * (1.0 - frac) + self.end_lr * frac  # exact at frac=1
        if step < warm:
            base *= step / warm
        return base
