"""AdamW with decoupled weight decay, plus gradient accumulation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError
from .params import ParameterStore


@dataclass
class AdamWState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self) -> float:
        """Learning rate for the next step (linear warmup, then constant)."""
        if self.warmup_steps and self.t < self.warmup_steps:
            return self.lr * (self.t + 1) / self.warmup_steps
        return self.lr


def step(params: ParameterStore, grads: dict[str, np.ndarray], state: AdamWState) -> None:
    """One AdamW update of the parameters named in ``grads``, in place.

    Moments are allocated lazily, so frozen parameters never get optimizer
    state.
    """
    bad = [n for n, g in grads.items() if not np.isfinite(g).all()]
    if bad:
        raise NonFiniteError(f"non-finite gradient in {bad[:5]} (step {state.t}); update aborted")
    lr = state.current_lr()
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data = p.data - lr * update


@dataclass
class AccumulationState:
    micro_batch_size: int
    accumulation_steps: int = 1
    count: int = 0
    running: dict = field(default_factory=dict)

    @property
    def effective_batch(self) -> int:
        return self.micro_batch_size * self.accumulation_steps


def accumulate_and_maybe_step(params: ParameterStore, micro_grads: dict, acc: AccumulationState, state: AdamWState) -> bool:
    """Add one micro-batch of gradients; step on every ``accumulation_steps``-th call.

    Returns whether an optimizer step happened.
    """
    for name, g in micro_grads.items():
        if name in acc.running:
            acc.running[name] = acc.running[name] + g
        else:
            acc.running[name] = g.copy()
    acc.count += 1
    if acc.count < acc.accumulation_steps:
        return False
    k = acc.accumulation_steps
    grads = acc.running if k == 1 else {n: g / k for n, g in acc.running.items()}
    acc.running = {}
    acc.count = 0
    step(params, grads, state)
    return True
