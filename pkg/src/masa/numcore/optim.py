"""Optimizers (AdamW, SGD with momentum) and learning-rate schedules."""

from __future__ import annotations

import numpy as np

from .params import ParamStore


class OptimState:
    """Per-parameter moment/velocity buffers plus a shared step counter."""

    def __init__(self):
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def _grad_of(t) -> np.ndarray:
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def adamw_step(
    params: ParamStore,
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.95,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """Bias-corrected Adam update with decoupled weight decay.

    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
    """
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    state.step += 1
    t = state.step
    for path, p in params.items():
        if not p.requires_grad:
            continue
        g = _grad_of(p)
        m = state.m.setdefault(path, np.zeros_like(p.data))
        v = state.v.setdefault(path, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data)


def sgd_momentum_step(
    params: ParamStore, state: OptimState, lr: float, momentum: float = 0.9
) -> None:
    """Classic momentum SGD: v <- momentum*v + g; theta <- theta - lr*v."""
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    state.step += 1
    for path, p in params.items():
        if not p.requires_grad:
            continue
        g = _grad_of(p)
        v = state.v.setdefault(path, np.zeros_like(p.data))
        v *= momentum
        v += g
        p.data -= lr * v


def pretrain_lr(epoch: int, base_lr: float, warmup_epochs: int, total_epochs: int) -> float:
    """Linear warmup to base_lr over warmup_epochs, then linear decay to 0."""
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch must be in [0, {total_epochs}], got {epoch}")
    if warmup_epochs >= total_epochs:
        raise ValueError("warmup_epochs must be < total_epochs")
    if epoch < warmup_epochs:
        return base_lr * epoch / warmup_epochs
    return base_lr * (total_epochs - epoch) / (total_epochs - warmup_epochs)


def finetune_lr(epoch: int, base_lr: float, step_epochs: int = 20, factor: float = 0.1) -> float:
    """Step decay: base_lr * factor^floor(epoch / step_epochs)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base_lr * factor ** (epoch // step_epochs)
