"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .params import ParamStore
from .tensor import NumericsError, Tensor, backward


def grad_check(
    f,
    store: ParamStore,
    h: float = 1e-5,
    max_entries: int = 200,
    seed: int = 0,
) -> float:
    """Compare backward gradients of ``f(store)`` against central differences.

    Samples up to ``max_entries`` scalar parameter entries and returns the
    maximum relative error |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8). ``f``
    must be a deterministic scalar function of the store.
    """
    if h <= 0:
        raise ValueError(f"step h must be > 0, got {h}")

    def eval_scalar() -> float:
        out = f(store)
        val = float(out.data) if isinstance(out, Tensor) else float(out)
        if not np.isfinite(val):
            raise NumericsError("grad_check objective returned a non-finite value")
        return val

    store.zero_grads()
    loss = f(store)
    if not isinstance(loss, Tensor):
        raise TypeError("grad_check objective must return a Tensor")
    if not np.isfinite(loss.data):
        raise NumericsError("grad_check objective returned a non-finite value")
    backward(loss)
    grads = {path: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
             for path, t in store.items() if t.requires_grad}

    entries = []
    for path, t in store.items():
        if t.requires_grad:
            entries.extend((path, i) for i in range(t.data.size))
    rng = np.random.default_rng(seed)
    if len(entries) > max_entries:
        picks = rng.choice(len(entries), size=max_entries, replace=False)
        entries = [entries[i] for i in sorted(picks)]

    max_err = 0.0
    for path, flat_idx in entries:
        flat = store[path].data.reshape(-1)
        keep = flat[flat_idx]
        flat[flat_idx] = keep + h
        f_plus = eval_scalar()
        flat[flat_idx] = keep - h
        f_minus = eval_scalar()
        flat[flat_idx] = keep
        g_fd = (f_plus - f_minus) / (2.0 * h)
        g_ad = grads[path].reshape(-1)[flat_idx]
        err = abs(g_ad - g_fd) / max(abs(g_ad), abs(g_fd), 1e-8)
        max_err = max(max_err, err)
    return max_err
