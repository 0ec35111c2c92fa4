"""AdamW with decoupled weight decay, plus a warmup+cosine LR schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class OptimState:
    """Per-parameter moment accumulators and the shared hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_optim(params: dict[str, Tensor], lr: float = 1e-3,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> OptimState:
    state = OptimState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                       weight_decay=weight_decay)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def optim_step(params: dict[str, Tensor], state: OptimState,
               lr: float | None = None) -> list[str]:
    """One AdamW update from the grads stored on ``params``.

    Parameters whose gradient contains a non-finite value are skipped
    (moments untouched) and their names returned so the caller can report.
    Deterministic given identical params, grads, and state.
    """
    if lr is None:
        lr = state.lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    skipped = []
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            skipped.append(name)
            continue
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data -= lr * update
    return skipped


def cosine_lr(step: int, total_steps: int, base_lr: float,
              warmup_ratio: float = 0.03) -> float:
    """Linear warmup over the first warmup_ratio of steps, cosine decay to 0."""
    total_steps = max(total_steps, 1)
    warmup = max(int(round(warmup_ratio * total_steps)), 1)
    if step < warmup:
        return base_lr * (step + 1) / warmup
    span = max(total_steps - warmup, 1)
    progress = min((step - warmup) / span, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
